"""Seeded synthetic corpora.

``make_toy_corpus`` writes a small speech corpus to disk: five words made
of tone-pattern and noise-band "phones", several speakers with shifted
pitch, optional inter-word pauses and injected non-speech events.
``sample_feature_corpus`` draws feature sequences directly from a random
HMM-GMM model, for exercising the trainer without audio.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acoustic import (NUM_STATES, AcousticModel, PhoneHmm, compile_utterance_hmm)
from .corpus import (SIL, CorpusManifest, FillerDictionary, PhoneSet,
                     PronunciationDictionary, TranscriptSet, write_manifest)
from .frontend import write_wav

SAMPLE_RATE = 16000

# phone -> ("tone", (f1, f2)) or ("noise", (lo, hi)), in Hz
PHONES = {
    "A": ("tone", (750, 1250)),
    "E": ("tone", (450, 2000)),
    "I": ("tone", (300, 2700)),
    "O": ("tone", (500, 900)),
    "U": ("tone", (280, 1400)),
    "M": ("tone", (220, 1700)),
    "K": ("noise", (1500, 2800)),
    "S": ("noise", (4500, 6500)),
    "T": ("noise", (3000, 4200)),
}
FILLER_PHONES = {
    "++FP++": ("FP", ("tone", (180, 540))),
    "++BR++": ("BR", ("noise", (200, 1200))),
    "++NOISE++": ("NZ", ("noise", (700, 5000))),
}
WORDS = {
    "AMI": [("A", "M", "I")],
    "KUSE": [("K", "U", "S", "E")],
    "TOMA": [("T", "O", "M", "A"), ("T", "O", "M")],
    "SEKI": [("S", "E", "K", "I")],
    "UTA": [("U", "T", "A")],
}
_WORD_ORDER = sorted(WORDS)
SPEAKERS = {"spA": 0.84, "spB": 0.94, "spC": 1.06, "spD": 1.16}


@dataclass
class ToyCorpus:
    root: Path
    name: str
    manifest: CorpusManifest
    lm_text: Path


def toy_manifest(train, test, wav_dir="wav", feat_dir="feat"):
    phone_set = PhoneSet(tuple([SIL] + list(PHONES) + [p for p, _ in FILLER_PHONES.values()]))
    dictionary = PronunciationDictionary({w: [tuple(p) for p in prons] for w, prons in WORDS.items()})
    fillers = FillerDictionary({tok: ph for tok, (ph, _) in FILLER_PHONES.items()})
    return CorpusManifest(phone_set, dictionary, fillers, train, test, Path(wav_dir), Path(feat_dir))


def _band_noise(rng, n, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    out = np.fft.irfft(spec, n)
    return out / (np.sqrt(np.mean(out ** 2)) + 1e-12)


def _segment(rng, kind, params, n, shift, level):
    t = np.arange(n) / SAMPLE_RATE
    if kind == "tone":
        f1, f2 = params
        x = (np.sin(2 * np.pi * f1 * shift * t + rng.uniform(0, 2 * np.pi))
             + 0.6 * np.sin(2 * np.pi * f2 * shift * t + rng.uniform(0, 2 * np.pi)))
        x /= 1.2
    else:
        lo, hi = params
        x = 0.5 * _band_noise(rng, n, lo * shift, min(hi * shift, 7900))
    ramp = min(80, n // 4)
    if ramp:
        env = np.ones(n)
        env[:ramp] = np.linspace(0, 1, ramp)
        env[-ramp:] = np.linspace(1, 0, ramp)
        x *= env
    return level * x


def _sentence(rng):
    length = int(rng.integers(1, 4))
    return [_WORD_ORDER[int(i)] for i in rng.integers(0, len(_WORD_ORDER), size=length)]


def synthesize(rng, tokens, speaker_shift, filler_prob=0.0, noise=0.35):
    """Waveform (float samples in [-1, 1]) and final token list with fillers.

    ``noise`` is the standard deviation of the additive white noise; the
    default puts it roughly level with the speech.
    """
    level = rng.uniform(0.25, 0.4)
    pieces = []
    out_tokens = []

    def silence(lo, hi):
        pieces.append(np.zeros(int(rng.uniform(lo, hi) * SAMPLE_RATE)))

    def filler():
        tok = list(FILLER_PHONES)[int(rng.integers(len(FILLER_PHONES)))]
        kind, params = FILLER_PHONES[tok][1]
        pieces.append(_segment(rng, kind, params, int(rng.uniform(0.12, 0.2) * SAMPLE_RATE), 1.0, 0.6 * level))
        out_tokens.append(tok)

    silence(0.08, 0.15)
    for k, word in enumerate(tokens):
        if rng.random() < filler_prob:
            filler()
            silence(0.02, 0.05)
        elif k > 0 and rng.random() < 0.5:
            silence(0.04, 0.1)
        prons = WORDS[word]
        pron = prons[int(rng.integers(len(prons)))]
        for ph in pron:
            kind, params = PHONES[ph]
            pieces.append(_segment(rng, kind, params, int(rng.uniform(0.05, 0.09) * SAMPLE_RATE),
                                   speaker_shift, level))
        out_tokens.append(word)
    silence(0.08, 0.15)
    x = np.concatenate(pieces)
    x += noise * rng.standard_normal(len(x))
    return np.clip(x, -1.0, 1.0), out_tokens


def make_toy_corpus(root, seed=0, num_train=320, num_test=50, name="toy", filler_prob=0.15, noise=0.35):
    """Write a seeded synthetic corpus under ``root`` and return its description.

    Layout: ``etc/`` holds the corpus files and ``<name>.lmtext`` (training
    sentences without fillers, one per line), ``wav/<speaker>/<uid>.wav``
    the audio.  Test utterances come from the same speakers.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    speakers = list(SPEAKERS)
    splits = {"train": TranscriptSet(), "test": TranscriptSet()}
    counter = 0
    for split, count in (("train", num_train), ("test", num_test)):
        ts = splits[split]
        for i in range(count):
            spk = speakers[i % len(speakers)]
            counter += 1
            uid = f"{spk}_{counter:04d}"
            fileid = f"{spk}/{uid}"
            samples, tokens = synthesize(rng, _sentence(rng), SPEAKERS[spk], filler_prob, noise)
            write_wav(root / "wav" / f"{fileid}.wav", samples, SAMPLE_RATE)
            ts.utterances.append((uid, tokens))
            ts.fileids.append(fileid)
    manifest = toy_manifest(splits["train"], splits["test"], root / "wav", root / "feat")
    write_manifest(manifest, root / "etc", name)
    lm_text = root / "etc" / f"{name}.lmtext"
    lm_text.write_text("".join(" ".join(t for t in toks if not t.startswith("++")) + "\n"
                               for _, toks in splits["train"].utterances), encoding="utf-8")
    return ToyCorpus(root, name, manifest, lm_text)


# ---------------------------------------------------------------------------
# Feature-level corpora sampled from a model


def random_model(phones, dim, rng, num_mixtures=1, separation=3.0):
    """CI model with well-separated random means and left-to-right transitions."""
    P = NUM_STATES * len(phones)
    means = rng.normal(0.0, separation, size=(P, num_mixtures, dim))
    variances = rng.uniform(0.5, 1.5, size=(P, num_mixtures, dim))
    weights = rng.dirichlet(np.ones(num_mixtures) * 5, size=P)
    hmms = {}
    for i, ph in enumerate(phones):
        trans = np.zeros((NUM_STATES, NUM_STATES + 1))
        for s in range(NUM_STATES):
            stay = rng.uniform(0.4, 0.8)
            trans[s, s], trans[s, s + 1] = stay, 1.0 - stay
        hmms[ph] = PhoneHmm(ph, range(NUM_STATES * i, NUM_STATES * (i + 1)), trans)
    return AcousticModel("CI", weights, means, variances, hmms)


def sample_utterance(hmm, model, rng, max_frames=2000):
    """Draw one feature sequence by running the composite HMM forward."""
    start_p = np.exp(hmm.log_start)
    trans = np.exp(hmm.log_trans)
    final = np.exp(hmm.log_final)
    s = int(rng.choice(len(start_p), p=start_p / start_p.sum()))
    frames = []
    while len(frames) < max_frames:
        p = hmm.phys[s]
        m = int(rng.choice(model.num_mixtures, p=model.weights[p]))
        frames.append(rng.normal(model.means[p, m], np.sqrt(model.variances[p, m])))
        row = np.append(trans[s], final[s])
        nxt = int(rng.choice(len(row), p=row / row.sum()))
        if nxt == len(row) - 1:
            break
        s = nxt
    return np.array(frames)


def sample_feature_corpus(seed=0, num_utterances=200, dim=39, num_mixtures=1):
    """Two-phone corpus (``SIL`` and ``A``) sampled from a random model.

    Returns ``(manifest, features, true_model)``; transcripts are one to
    three repetitions of the single word ``A``.
    """
    rng = np.random.default_rng(seed)
    model = random_model([SIL, "A"], dim, rng, num_mixtures)
    phone_set = PhoneSet((SIL, "A"))
    dictionary = PronunciationDictionary({"A": [("A",)]})
    fillers = FillerDictionary({})
    train = TranscriptSet()
    features = {}
    for i in range(num_utterances):
        uid = f"utt{i:04d}"
        tokens = ["A"] * int(rng.integers(1, 4))
        hmm = compile_utterance_hmm(tokens, dictionary, fillers, model)
        features[uid] = sample_utterance(hmm, model, rng)
        train.utterances.append((uid, tokens))
        train.fileids.append(uid)
    manifest = CorpusManifest(phone_set, dictionary, fillers, train, TranscriptSet())
    return manifest, features, model
