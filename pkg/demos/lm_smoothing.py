"""Compare smoothing choices by held-out perplexity on a tiny corpus."""

from miniasr import lm

TRAIN = """
the cat sat on the mat
the dog sat on the log
a cat saw the dog
the dog saw a cat on the mat
"""
HELDOUT = """
the cat sat on the log
a dog saw the cat
"""


def sentences(text):
    return [line.split() for line in text.strip().splitlines()]


def main():
    train, heldout = sentences(TRAIN), sentences(HELDOUT)
    candidates = {
        "laplace": lm.Smoothing.laplace(),
        "additive k=0.1": lm.Smoothing.additive(0.1),
        "additive k=0.01": lm.Smoothing.additive(0.01),
        "interpolated .1/.3/.6": lm.Smoothing.interpolated(0.1, 0.3, 0.6),
    }
    for order in (1, 2, 3):
        counts = lm.count_ngrams(train, order)
        print(f"order {order}")
        for name, sm in candidates.items():
            if sm.kind == "interpolated" and order != 3:
                continue
            ppl = lm.perplexity(lm.estimate(counts, sm), heldout)
            print(f"  {name:<24} ppl {ppl.perplexity:8.3f}  ({ppl.num_events} events)")

    # every history defines a proper distribution over the vocabulary
    model = lm.estimate(lm.count_ngrams(train, 3), lm.Smoothing.additive(0.1))
    dist = model.distribution(("the", "cat"))
    print(f"\nP(. | the cat) sums to {dist.sum():.12f}; "
          f"most likely next word: {model.vocab[int(dist.argmax())]}")


if __name__ == "__main__":
    main()
