import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from miniasr.acoustic import (
    AcousticModel,
    GaussianMixture,
    NUM_STATES,
    PhoneHmm,
    TrainingStats,
    accumulate_stats,
    baum_welch_iteration,
    build_cd_model,
    compile_utterance_hmm,
    component_log_likelihoods,
    flat_start,
    forward_backward,
    read_model,
    split_mixtures,
    training_utterances,
    uniform_segmentation,
    word_triphones,
    write_model,
)
from miniasr.corpus import (CorpusManifest, FillerDictionary, PhoneSet, PronunciationDictionary,
                            TranscriptSet)
from miniasr.errors import BadSchedule, CorruptModelFile, UnknownToken, UtteranceTooShort
from miniasr.hmm import Trellis, logsumexp
from miniasr.toy import random_model, sample_feature_corpus

from oracles import brute_force_forward, brute_force_viterbi, gmm_logpdf, random_hmm


def _gauss(x, mu, var):
    return -0.5 * math.log(2 * math.pi * var) - 0.5 * (x - mu) ** 2 / var


def _manifest(lines, dictionary, phones=("SIL", "A", "B", "C"), fillers=None):
    train = TranscriptSet([(f"u{i}", toks) for i, toks in enumerate(lines)])
    train.fileids = train.ids()
    return CorpusManifest(PhoneSet(tuple(phones)), PronunciationDictionary(dictionary),
                          FillerDictionary(fillers or {}), train, TranscriptSet())


@pytest.fixture(scope="module")
def em_corpus():
    return sample_feature_corpus(seed=3, num_utterances=200, dim=39)


class TestTrellis:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 8), st.integers(0, 10_000))
    def test_forward_matches_enumeration(self, S, T, seed):
        rng = np.random.default_rng(seed)
        ls, lt, lf = random_hmm(rng, S)
        log_b = rng.normal(0, 3, size=(T, S))
        expected = brute_force_forward(ls, lt, lf, log_b)
        if not np.isfinite(expected):
            with pytest.raises(UtteranceTooShort):
                Trellis(ls, lt, lf).forward(log_b)
            return
        got, _ = Trellis(ls, lt, lf).forward(log_b)
        assert got == pytest.approx(expected, rel=1e-9)

    def test_viterbi_with_gmm_emissions(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            S, T, M, D = rng.integers(1, 5), rng.integers(1, 9), rng.integers(1, 4), 3
            ls, lt, lf = random_hmm(rng, S, sparse=False)
            w = rng.dirichlet(np.ones(M), size=S)
            mu = rng.normal(size=(S, M, D))
            var = rng.uniform(0.3, 2.0, size=(S, M, D))
            X = rng.normal(size=(T, D))
            log_b = np.array([[gmm_logpdf(x, w[s], mu[s], var[s]) for s in range(S)] for x in X])
            np.testing.assert_allclose(logsumexp(component_log_likelihoods(X, w, mu, var), axis=2),
                                       log_b, rtol=1e-10)
            score, path = Trellis(ls, lt, lf).viterbi(log_b)
            ref_score, ref_path = brute_force_viterbi(ls, lt, lf, log_b)
            assert score == pytest.approx(ref_score, rel=1e-9)
            np.testing.assert_array_equal(path, ref_path)

    def test_two_state_chain_by_hand(self):
        obs = [0.1, 0.5, 1.2]
        mus, var = [0.0, 1.0], 0.5
        b = np.array([[_gauss(o, m, var) for m in mus] for o in obs])
        ls = np.log([1.0, 1e-300])
        ls[1] = -np.inf
        lt = np.log([[0.6, 0.4], [1e-300, 0.7]])
        lt[1, 0] = -np.inf
        lf = np.array([-np.inf, math.log(0.3)])
        # the only valid paths are 0-0-1 and 0-1-1
        p001 = b[0, 0] + math.log(0.6) + b[1, 0] + math.log(0.4) + b[2, 1] + math.log(0.3)
        p011 = b[0, 0] + math.log(0.4) + b[1, 1] + math.log(0.7) + b[2, 1] + math.log(0.3)
        got, _ = Trellis(ls, lt, lf).forward(b)
        assert got == pytest.approx(np.logaddexp(p001, p011), rel=1e-12)

    def test_single_state_single_frame(self):
        b = np.array([[_gauss(0.3, 0.0, 1.0)]])
        got, _ = Trellis([0.0], [[math.log(0.5)]], [math.log(0.5)]).forward(b)
        assert got == pytest.approx(math.log(0.5) + _gauss(0.3, 0.0, 1.0), rel=1e-12)

    def test_occupancies_sum_to_one(self):
        rng = np.random.default_rng(2)
        ls, lt, lf = random_hmm(rng, 4, sparse=False)
        _, gamma, _, _, _ = Trellis(ls, lt, lf).posteriors(rng.normal(0, 2, size=(12, 4)))
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-9)

    def test_too_short(self):
        lt = np.full((3, 3), -np.inf)
        lt[0, 1] = lt[1, 2] = 0.0
        lf = np.array([-np.inf, -np.inf, 0.0])
        with pytest.raises(UtteranceTooShort):
            Trellis([0.0, -np.inf, -np.inf], lt, lf).forward(np.zeros((2, 3)))


class TestGaussianMixture:
    def test_split_example(self):
        g = GaussianMixture([1.0], [[1.0, -2.0]], [[4.0, 0.25]]).split()
        np.testing.assert_array_equal(g.weights, [0.5, 0.5])
        np.testing.assert_allclose(g.means, [[1.4, -1.9], [0.6, -2.1]])
        np.testing.assert_array_equal(g.variances, [[4.0, 0.25], [4.0, 0.25]])

    def test_zero_occupancy_component_held(self):
        g = GaussianMixture([0.5, 0.5], [[0.0], [1e6]], [[1.0], [1.0]])
        x = np.random.default_rng(0).normal(size=(50, 1))
        new = g.reestimate(x, weight_floor=1e-5)
        np.testing.assert_array_equal(new.means[1], [1e6])
        np.testing.assert_array_equal(new.variances[1], [1.0])
        np.testing.assert_allclose(new.weights, np.array([1.0, 1e-5]) / (1 + 1e-5), rtol=1e-12)

    def test_split_then_reestimate_tracks_bimodal_modes(self):
        rng = np.random.default_rng(4)
        D = 39
        X = np.concatenate([rng.normal(-2, 1, size=(500, D)), rng.normal(2, 1, size=(500, D))])
        single = GaussianMixture([1.0], [X.mean(axis=0)], [X.var(axis=0)])
        new = single.split().reestimate(X)
        order = np.argsort(new.means[:, 0])
        np.testing.assert_array_less(np.abs(new.means[order[0]] + 2), 0.5)
        np.testing.assert_array_less(np.abs(new.means[order[1]] - 2), 0.5)


class TestCompile:
    @pytest.fixture
    def model(self):
        return random_model(["SIL", "A", "B", "FP"], 2, np.random.default_rng(0))

    def test_word_chain(self, model):
        d = PronunciationDictionary({"AB": [("A", "B")]})
        hmm = compile_utterance_hmm(["AB"], d, FillerDictionary({}), model)
        assert hmm.unit_labels == ["SIL", "A", "B", "SIL"]
        assert hmm.num_states == 12

    def test_filler(self, model):
        hmm = compile_utterance_hmm(["++FP++"], PronunciationDictionary({}),
                                    FillerDictionary({"++FP++": "FP"}), model)
        assert hmm.unit_labels == ["SIL", "FP", "SIL"]

    def test_alternative_pronunciations(self, model):
        d = PronunciationDictionary({"AB": [("A", "B"), ("B", "A")]})
        hmm = compile_utterance_hmm(["AB"], d, FillerDictionary({}), model)
        assert hmm.unit_labels == ["SIL", "A", "B", "B", "A", "SIL"]
        sil_exit = 2
        succ = np.flatnonzero(np.isfinite(hmm.log_trans[sil_exit]))
        np.testing.assert_array_equal(succ, [2, 3, 9])
        exit_p = model.phone_hmms["SIL"].transitions[2, 3]
        np.testing.assert_allclose(np.exp(hmm.log_trans[sil_exit, [3, 9]]), [exit_p / 2] * 2)
        assert np.isfinite(hmm.log_trans[8, 15]) and np.isfinite(hmm.log_trans[14, 15])

    def test_unknown_token(self, model):
        with pytest.raises(UnknownToken, match="QQQ"):
            compile_utterance_hmm(["QQQ"], PronunciationDictionary({}), FillerDictionary({}), model)

    def test_optional_silence_paths(self, model):
        d = PronunciationDictionary({"A": [("A",)]})
        hmm = compile_utterance_hmm(["A", "A"], d, FillerDictionary({}), model)
        assert hmm.unit_labels == ["SIL", "A", "SIL", "A", "SIL"]
        # the first A exits either into the optional SIL or straight into the second A
        np.testing.assert_array_equal(np.flatnonzero(np.isfinite(hmm.log_trans[5])), [5, 6, 9])


class TestFlatStart:
    def test_segmentation_rule(self):
        assert uniform_segmentation(12, 9) == [2, 2, 2, 1, 1, 1, 1, 1, 1]
        assert sum(uniform_segmentation(100, 7)) == 100

    def test_identical_frames(self):
        m = _manifest([["A"]], {"A": [("A",)]}, phones=("SIL", "A"))
        v = np.arange(39, dtype=float)
        model = flat_start(m, {"u0": np.tile(v, (30, 1))})
        np.testing.assert_array_equal(model.means[:, 0], np.tile(v, (6, 1)))
        np.testing.assert_array_equal(model.variances, model.variance_floor)
        np.testing.assert_array_equal(model.phone_hmms["A"].transitions[:, :3].diagonal(), 0.5)

    def test_segmentation_replay(self, em_corpus):
        manifest, feats, _ = em_corpus
        model = flat_start(manifest, feats)
        assigned = {p: [] for p in range(model.num_states)}
        ids = {"SIL": [0, 1, 2], "A": [3, 4, 5]}
        for uid, toks in manifest.train.utterances:
            states = ids["SIL"] + ids["A"] * len(toks) + ids["SIL"]
            for p, seg in zip(states, np.array_split(feats[uid], len(states))):
                assigned[p].append(seg)
        for p, segs in assigned.items():
            frames = np.concatenate(segs)
            np.testing.assert_allclose(model.means[p, 0], frames.mean(axis=0), rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(model.variances[p, 0],
                                       np.maximum(frames.var(axis=0), model.variance_floor), rtol=1e-7)


class TestBaumWelch:
    def test_em_monotone_and_stochastic(self, em_corpus):
        manifest, feats, _ = em_corpus
        model = flat_start(manifest, feats)
        lls = []
        for _ in range(10):
            model, ll = baum_welch_iteration(model, manifest, feats)
            model.check(1e-9)
            lls.append(ll)
        for a, b in zip(lls, lls[1:]):
            assert b >= a - 1e-6 * abs(a)
        assert lls[-1] > lls[0]

    def test_shards_match_serial(self, em_corpus):
        manifest, feats, _ = em_corpus
        model = flat_start(manifest, feats)
        utts = training_utterances(manifest, feats)[:40]
        serial = accumulate_stats(model, utts, manifest.dictionary, manifest.fillers)
        sharded = accumulate_stats(model, utts, manifest.dictionary, manifest.fillers, shards=4)
        for name in ("occ", "sum_x", "sum_x2"):
            np.testing.assert_allclose(getattr(sharded, name), getattr(serial, name), rtol=1e-9, atol=1e-9)
        for k in serial.trans:
            np.testing.assert_allclose(sharded.trans[k], serial.trans[k], rtol=1e-9)
        assert sharded.total_log_likelihood == pytest.approx(serial.total_log_likelihood, rel=1e-9)

    def test_stats_merge_is_addition(self, em_corpus):
        manifest, feats, model = em_corpus
        (u1, t1, f1), (u2, t2, f2) = training_utterances(manifest, feats)[:2]
        d, fl = manifest.dictionary, manifest.fillers
        a, _ = forward_backward(compile_utterance_hmm(t1, d, fl, model), model, f1)
        b, _ = forward_backward(compile_utterance_hmm(t2, d, fl, model), model, f2)
        both = TrainingStats.zeros(model)
        for t, f in ((t1, f1), (t2, f2)):
            forward_backward(compile_utterance_hmm(t, d, fl, model), model, f, both)
        merged = a + b
        np.testing.assert_allclose(merged.occ, both.occ, rtol=1e-12)
        assert merged.num_frames == len(f1) + len(f2)
        assert np.all(merged.occ >= 0)

    def test_forward_backward_gamma_total(self, em_corpus):
        manifest, feats, model = em_corpus
        uid, toks, X = training_utterances(manifest, feats)[0]
        hmm = compile_utterance_hmm(toks, manifest.dictionary, manifest.fillers, model)
        stats, ll = forward_backward(hmm, model, X)
        assert stats.occ.sum() == pytest.approx(len(X), rel=1e-9)
        log_b = model.log_likelihoods(X, hmm.phys)[0]
        assert ll == pytest.approx(hmm.trellis().forward(log_b)[0], rel=1e-12)

    def test_relabeling_invariance(self, em_corpus):
        manifest, feats, model = em_corpus
        perm = np.random.default_rng(5).permutation(model.num_states)
        inv = np.argsort(perm)
        hmms = {k: PhoneHmm(k, [inv[s] for s in h.state_ids], h.transitions) for k, h in model.phone_hmms.items()}
        shuffled = AcousticModel("CI", model.weights[perm], model.means[perm], model.variances[perm], hmms)
        for uid, toks, X in training_utterances(manifest, feats)[:5]:
            lls = []
            for m in (model, shuffled):
                hmm = compile_utterance_hmm(toks, manifest.dictionary, manifest.fillers, m)
                lls.append(forward_backward(hmm, m, X)[1])
            assert lls[0] == pytest.approx(lls[1], rel=1e-12)


class TestSplitting:
    def test_schedule(self, em_corpus):
        manifest, feats, _ = em_corpus
        model = flat_start(manifest, feats)
        for target in (2, 4, 8):
            model = split_mixtures(model, target)
            assert model.num_mixtures == target
            model.check(1e-9)
        with pytest.raises(BadSchedule):
            split_mixtures(model, 16)
        with pytest.raises(BadSchedule):
            split_mixtures(flat_start(manifest, feats), 4)

    def test_split_preserves_parameters_per_component(self, em_corpus):
        manifest, feats, _ = em_corpus
        model = flat_start(manifest, feats)
        two = split_mixtures(model, 2)
        sd = np.sqrt(model.variances[:, 0])
        np.testing.assert_allclose(two.means[:, 0], model.means[:, 0] + 0.2 * sd)
        np.testing.assert_allclose(two.means[:, 1], model.means[:, 0] - 0.2 * sd)
        np.testing.assert_array_equal(two.weights, 0.5)


class TestContextDependent:
    DICT = {"ABC": [("A", "B", "C")], "CA": [("C", "A")]}

    def test_frequent_triphone_is_cloned(self):
        m = _manifest([["ABC"]] * 5, self.DICT)
        ci = random_model(["SIL", "A", "B", "C"], 2, np.random.default_rng(1))
        cd = build_cd_model(ci, m, min_count=3)
        hmm = cd.phone_hmms["A-B+C"]
        src = list(ci.phone_hmms["B"].state_ids)
        np.testing.assert_array_equal(cd.means[list(hmm.state_ids)], ci.means[src])
        np.testing.assert_array_equal(hmm.transitions, ci.phone_hmms["B"].transitions)
        assert set(hmm.state_ids).isdisjoint(src)
        assert cd.resolve("A-B+C") is hmm

    def test_rare_triphone_is_tied(self):
        m = _manifest([["ABC"]] * 5, self.DICT)
        ci = random_model(["SIL", "A", "B", "C"], 2, np.random.default_rng(1))
        cd = build_cd_model(ci, m, min_count=10)
        assert "A-B+C" not in cd.phone_hmms
        assert [cd.tying[("A-B+C", i)] for i in range(3)] == list(ci.phone_hmms["B"].state_ids)
        assert cd.resolve("A-B+C").state_ids == ci.phone_hmms["B"].state_ids

    def test_every_requested_state_resolves(self):
        rng = np.random.default_rng(8)
        words = {f"W{i}": [tuple(rng.choice(["A", "B", "C"], size=rng.integers(1, 5)))] for i in range(8)}
        lines = [list(rng.choice(sorted(words), size=rng.integers(1, 4))) for _ in range(40)]
        m = _manifest(lines, words)
        ci = random_model(["SIL", "A", "B", "C"], 2, rng)
        cd = build_cd_model(ci, m, min_count=3)
        for prons in words.values():
            for tri in word_triphones(prons[0]):
                for i in range(NUM_STATES):
                    assert 0 <= cd.tying[(tri, i)] < cd.num_states
        for toks in lines:
            hmm = compile_utterance_hmm(toks, m.dictionary, m.fillers, cd)
            assert hmm.num_states == NUM_STATES * len(hmm.unit_labels)
        cd.check()


class TestModelFiles:
    def _assert_same(self, a, b):
        assert a.kind == b.kind and a.tying == b.tying
        for name in ("weights", "means", "variances"):
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
        assert list(a.phone_hmms) == list(b.phone_hmms)
        for k in a.phone_hmms:
            assert a.phone_hmms[k].state_ids == b.phone_hmms[k].state_ids
            assert a.phone_hmms[k].transitions.tobytes() == b.phone_hmms[k].transitions.tobytes()

    def test_ci_roundtrip(self, tmp_path):
        model = random_model(["SIL", "A", "B"], 39, np.random.default_rng(2), num_mixtures=4)
        write_model(model, tmp_path / "m.mam")
        back = read_model(tmp_path / "m.mam")
        self._assert_same(model, back)
        write_model(back, tmp_path / "again.mam")
        assert (tmp_path / "m.mam").read_bytes() == (tmp_path / "again.mam").read_bytes()

    def test_cd_roundtrip_keeps_tying(self, tmp_path):
        m = _manifest([["ABC"]] * 5 + [["CA"]], TestContextDependent.DICT)
        cd = build_cd_model(random_model(["SIL", "A", "B", "C"], 3, np.random.default_rng(3)), m)
        write_model(cd, tmp_path / "cd.mam")
        self._assert_same(cd, read_model(tmp_path / "cd.mam"))

    def test_bad_magic_and_truncation(self, tmp_path):
        model = random_model(["SIL", "A"], 3, np.random.default_rng(4))
        p = tmp_path / "m.mam"
        write_model(model, p)
        data = p.read_bytes()
        p.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(CorruptModelFile, match="magic"):
            read_model(p)
        p.write_bytes(data[:-7])
        with pytest.raises(CorruptModelFile):
            read_model(p)
