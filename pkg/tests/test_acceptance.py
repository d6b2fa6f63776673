"""One test per acceptance criterion; the summary prints PASS/FAIL per line."""

import itertools
import json
import time

import numpy as np
import pytest

from miniasr import lm
from miniasr.acoustic import (accumulate_stats, baum_welch_iteration, component_log_likelihoods,
                              flat_start, read_model, split_mixtures, training_utterances,
                              write_model)
from miniasr.cli import main
from miniasr.frontend import FeatureSequence, read_feat, write_feat
from miniasr.hmm import Trellis, logsumexp
from miniasr.scoring import align, score
from miniasr.toy import random_model, sample_feature_corpus

from oracles import (brute_force_forward, brute_force_viterbi, gmm_logpdf, min_alignment_cost,
                     random_hmm)

criterion = pytest.mark.criterion


def _random_corpus(rng, n_sent, vocab):
    words = [f"w{i}" for i in range(vocab)]
    return [[words[j] for j in rng.integers(0, vocab, size=rng.integers(1, 8))] for _ in range(n_sent)]


def _random_history(rng, model):
    pool = model.vocab[:-1] + [lm.BOS, lm.EOS]
    return tuple(pool[j] for j in rng.integers(0, len(pool), size=model.order - 1))


@criterion("forward/viterbi oracle equivalence")
def test_forward_viterbi_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 100:
        S, T = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        M, D = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        ls, lt, lf = random_hmm(rng, S)
        w = rng.dirichlet(np.ones(M), size=S)
        mu = rng.normal(0, 2, size=(S, M, D))
        var = rng.uniform(0.2, 3.0, size=(S, M, D))
        X = rng.normal(0, 2, size=(T, D))
        log_b = np.array([[gmm_logpdf(x, w[s], mu[s], var[s]) for s in range(S)] for x in X])
        np.testing.assert_allclose(logsumexp(component_log_likelihoods(X, w, mu, var), axis=2), log_b,
                                   rtol=1e-9)
        expected = brute_force_forward(ls, lt, lf, log_b)
        if not np.isfinite(expected):
            continue  # no path of this length; not a model in the population
        trellis = Trellis(ls, lt, lf)
        assert trellis.forward(log_b)[0] == pytest.approx(expected, rel=1e-9)
        score_v, path = trellis.viterbi(log_b)
        ref_score, ref_path = brute_force_viterbi(ls, lt, lf, log_b)
        assert score_v == pytest.approx(ref_score, rel=1e-9)
        np.testing.assert_array_equal(path, ref_path)
        checked += 1
    assert time.perf_counter() - start < 30


@criterion("EM monotonicity")
def test_em_monotonicity():
    start = time.perf_counter()
    manifest, feats, _ = sample_feature_corpus(seed=7, num_utterances=200)
    assert len(manifest.phone_set) == 2
    model = flat_start(manifest, feats)
    lls = []
    for _ in range(10):
        model, ll = baum_welch_iteration(model, manifest, feats)
        lls.append(ll)
    for a, b in zip(lls, lls[1:]):
        assert b >= a - 1e-6 * abs(a)
    assert time.perf_counter() - start < 60


@criterion("mixture-splitting validity")
def test_mixture_splitting():
    manifest, feats, _ = sample_feature_corpus(seed=1, num_utterances=200, num_mixtures=2)
    utts = training_utterances(manifest, feats)

    def loglik(model):
        return accumulate_stats(model, utts, manifest.dictionary, manifest.fillers).total_log_likelihood

    def train(model, n=4):
        for _ in range(n):
            model, _ = baum_welch_iteration(model, manifest, feats)
        return model

    model = train(flat_start(manifest, feats))
    before = loglik(model)
    for target in (2, 4, 8):
        model = split_mixtures(model, target)
        assert np.all(np.abs(model.weights.sum(axis=1) - 1) <= 1e-9)
        assert np.all(model.variances >= model.variance_floor)
        model = train(model)
        assert np.all(np.abs(model.weights.sum(axis=1) - 1) <= 1e-9)
        assert np.all(model.variances >= model.variance_floor)
        after = loglik(model)
        assert after >= before - 1e-6
        before = after


@criterion("LM normalization")
def test_lm_normalization():
    rng = np.random.default_rng(99)
    lambdas = {1: (1.0,), 2: (0.3, 0.7), 3: (0.1, 0.3, 0.6)}
    for i in range(50):
        order = 1 + i % 3
        counts = lm.count_ngrams(_random_corpus(rng, int(rng.integers(5, 40)), int(rng.integers(2, 12))), order)
        smoothings = [lm.Smoothing.laplace()] + [lm.Smoothing.additive(k) for k in (0.1, 1.0, 10.0)]
        smoothings.append(lm.Smoothing.interpolated(*lambdas[order]))
        for sm in smoothings:
            model = lm.estimate(counts, sm)
            for _ in range(100):
                assert abs(model.distribution(_random_history(rng, model)).sum() - 1.0) <= 1e-9
    uni = lm.estimate(lm.count_ngrams([["a", "b", "a"]], 1))
    bi = lm.estimate(lm.count_ngrams([["a", "b", "a"]], 2))
    assert uni.prob("a", ()) == 3 / 7
    assert bi.prob("a", (lm.BOS,)) == 1 / 2


@criterion("scorer oracle equivalence")
def test_scorer_oracle():
    strings = ["".join(t) for n in range(7) for t in itertools.product("abc", repeat=n)]
    for r in strings:
        for h in strings:
            assert align(r, h).errors == min_alignment_cost(r, h)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        ref = list(rng.choice(list("abc"), size=rng.integers(1, 7)))
        hyp = list(rng.choice(list("abc"), size=rng.integers(0, 7)))
        rep = score([(ref, hyp, "ALL")])
        assert rep.percent_accuracy <= rep.percent_correct


@criterion("format round-trips")
def test_format_roundtrips(tmp_path):
    rng = np.random.default_rng(11)
    for i in range(10):
        frames = rng.normal(0, 5, size=(int(rng.integers(0, 300)), 39)).astype(np.float32)
        write_feat(FeatureSequence(frames, f"u{i}"), tmp_path / "f.mfc")
        back_feat = read_feat(tmp_path / "f.mfc")
        assert back_feat.frames.astype(np.float32).tobytes() == frames.tobytes()
        write_feat(back_feat, tmp_path / "g.mfc")
        assert (tmp_path / "g.mfc").read_bytes() == (tmp_path / "f.mfc").read_bytes()

        sents = _random_corpus(rng, 30, int(rng.integers(2, 10)))
        order = 1 + i % 3
        sm = [lm.Smoothing.laplace(), lm.Smoothing.additive(0.5),
              lm.Smoothing.interpolated(*[1.0 / order] * order)][i % 3]
        model = lm.estimate(lm.count_ngrams(sents, order), sm)
        lm.write_arpa(model, tmp_path / "m.arpa")
        back = lm.read_arpa(tmp_path / "m.arpa")
        lm.write_binary(model, tmp_path / "m.lmb")
        binary = lm.read_binary(tmp_path / "m.lmb")
        for n in range(1, order + 1):
            orig = model.listed(n)
            assert set(back.listed(n)) == set(orig) == set(binary.listed(n))
            for gram, lp in orig.items():
                assert abs(back.listed(n)[gram] - lp) <= 1e-6
                assert binary.listed(n)[gram] == float(np.float32(lp))
        lm.write_binary(binary, tmp_path / "again.lmb")
        assert (tmp_path / "again.lmb").read_bytes() == (tmp_path / "m.lmb").read_bytes()

        am = random_model(["SIL", "A", "B"], 39, rng, num_mixtures=2 ** (i % 4))
        write_model(am, tmp_path / "m.mam")
        back_am = read_model(tmp_path / "m.mam")
        for name in ("weights", "means", "variances"):
            assert getattr(back_am, name).tobytes() == getattr(am, name).tobytes()
        for k, h in am.phone_hmms.items():
            assert back_am.phone_hmms[k].transitions.tobytes() == h.transitions.tobytes()


# ---------------------------------------------------------------------------
# end-to-end toy experiment, run twice from scratch


def _experiment(root):
    start = time.perf_counter()
    assert main(["make-toy-corpus", "--out", str(root), "--seed", "0", "--num-train", "320",
                 "--num-test", "50", "--iterations", "4"]) == 0
    assert main(["experiment", "--config", str(root / "toy.cfg")]) == 0
    return time.perf_counter() - start


@pytest.fixture(scope="module")
def experiments(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("run_a"), tmp_path_factory.mktemp("run_b")
    return (a, _experiment(a)), (b, _experiment(b))


@pytest.mark.slow
@criterion("end-to-end toy experiment")
def test_end_to_end(experiments):
    (root, seconds), _ = experiments
    train = (root / "etc" / "toy_train.transcription").read_text()
    assert train.count("\n") >= 300
    assert (root / "etc" / "toy_test.transcription").read_text().count("\n") == 50
    assert "++" in train  # fillers were injected
    rows = {(r["model"], r["mixtures"]): r for r in json.loads((root / "exp" / "summary.json").read_text())}
    print((root / "exp" / "summary.txt").read_text())
    assert rows[("CI", 8)]["percent_accuracy"] >= 90.0
    assert rows[("CI", 8)]["percent_accuracy"] >= rows[("CI", 1)]["percent_accuracy"]
    assert seconds < 300


@pytest.mark.slow
@criterion("determinism")
def test_determinism(experiments):
    (a, _), (b, _) = experiments
    patterns = ["exp/models/*.mam", "exp/hyp/*.hyp", "exp/score/*", "exp/summary.*"]
    for pattern in patterns:
        files = sorted(p.relative_to(a) for p in a.glob(pattern))
        assert files, pattern
        for rel in files:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
