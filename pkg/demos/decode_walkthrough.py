"""Decode utterances sampled from a known model and inspect the scores.

A random three-phone model generates the audio-free feature frames, so the
true transcript is known and the decoder output can be checked by eye.
"""

import numpy as np

from miniasr.acoustic import compile_utterance_hmm
from miniasr.corpus import FillerDictionary, PronunciationDictionary
from miniasr.decoder import DecodeConfig, build_search_graph, decode, forced_score
from miniasr.lm import Smoothing, count_ngrams, estimate
from miniasr.scoring import score
from miniasr.toy import random_model, sample_utterance

WORDS = PronunciationDictionary({"GO": [("A", "B")], "STOP": [("B", "C")], "NOW": [("C", "A")]})
FILLERS = FillerDictionary({"++NOISE++": "FP"})
TEXT = [["GO", "NOW"], ["STOP", "NOW"], ["GO"], ["STOP"], ["GO", "STOP", "NOW"]]


def main():
    rng = np.random.default_rng(3)
    am = random_model(["SIL", "A", "B", "C", "FP"], 6, rng, num_mixtures=2, separation=2.0)
    lm = estimate(count_ngrams(TEXT, 2), Smoothing.additive(0.5))
    graph = build_search_graph(WORDS, FILLERS, lm, am)
    cfg = DecodeConfig(beam_logwidth=80.0, language_weight=2.0, word_insertion_penalty=-1.0)
    print(f"search graph: {len(graph.words)} words, {graph.num_histories} LM histories\n")

    pairs = []
    for i, ref in enumerate(TEXT):
        frames = sample_utterance(compile_utterance_hmm(ref, WORDS, FILLERS, am), am, rng)
        hyp = decode(frames, graph, cfg, utterance_id=f"u{i}")
        forced = forced_score(frames, graph, lm, ref, cfg)
        pairs.append((ref, hyp.tokens(), "ALL"))
        print(f"{hyp.utterance_id}: ref {' '.join(ref):<16} hyp {' '.join(hyp.tokens()):<16} "
              f"T={len(frames):3d}")
        print(f"    total {hyp.total_score:9.2f} = ac {hyp.acoustic_score:9.2f} "
              f"+ {cfg.language_weight} * lm {hyp.lm_score:6.2f} + pen {hyp.penalty_score:5.2f}")
        print(f"    forced score of the reference {forced.total_score:9.2f}")
    print()
    print(score(pairs).render())


if __name__ == "__main__":
    main()
