"""Text normalisation and closed-form n-gram language models.

Models are estimated from counts with Laplace, additive(k) or linearly
interpolated smoothing and can be saved as ARPA text or in a compact
binary layout.  ``<s>`` is context only; ``</s>`` is a predicted event.
"""

import math
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptLmFile, EmptyCorpus, OovToken

BOS = "<s>"
EOS = "</s>"
UNK = "<UNK>"

INTERP_EPSILON = 1e-10

_DEFAULT_DIGITS = {
    "0": "ZERO", "1": "ONE", "2": "TWO", "3": "THREE", "4": "FOUR",
    "5": "FIVE", "6": "SIX", "7": "SEVEN", "8": "EIGHT", "9": "NINE",
}


@dataclass
class NormalizationRules:
    punctuation_set: str = "\"#$%&'()*+,-/:;<=>@[\\]^_`{|}~፡፣፤፥፦፧፨"
    sentence_terminators: str = ".!?\n።"
    number_lexicon: dict = field(default_factory=lambda: dict(_DEFAULT_DIGITS))

    def __post_init__(self):
        missing = [d for d in "0123456789" if d not in self.number_lexicon]
        if missing:
            raise ValueError(f"number lexicon lacks single digits: {' '.join(missing)}")
        for pattern in self.number_lexicon:
            if not pattern.isdigit() or not pattern.isascii():
                raise ValueError(f"number lexicon key {pattern!r} is not a digit string")
        self._longest = max(len(k) for k in self.number_lexicon)

    @classmethod
    def from_lexicon_file(cls, path, **kwargs):
        """Read ``DIGITS WORD [WORD ...]`` lines into a number lexicon."""
        lexicon = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            parts = line.split()
            if parts and not parts[0].startswith("#"):
                lexicon[parts[0]] = " ".join(parts[1:])
        return cls(number_lexicon=lexicon, **kwargs)

    def expand_number(self, digits):
        words = []
        i = 0
        while i < len(digits):
            for width in range(min(self._longest, len(digits) - i), 0, -1):
                chunk = digits[i : i + width]
                if chunk in self.number_lexicon:
                    words.append(self.number_lexicon[chunk])
                    i += width
                    break
        return " ".join(words)


def clean_text(raw, rules=None):
    """Split ``raw`` into sentences of tokens.

    Sentences break at terminators, punctuation is stripped, digit runs are
    spelled out through the number lexicon (longest match first, digit by
    digit otherwise) and empty sentences are dropped.
    """
    rules = rules or NormalizationRules()
    splitter = "[" + re.escape(rules.sentence_terminators) + "]"
    strip = str.maketrans({c: " " for c in rules.punctuation_set})
    sentences = []
    for chunk in re.split(splitter, raw):
        chunk = chunk.translate(strip)
        chunk = re.sub(r"[0-9]+", lambda m: f" {rules.expand_number(m.group())} ", chunk)
        tokens = chunk.split()
        if tokens:
            sentences.append(tokens)
    return sentences


# ---------------------------------------------------------------------------
# Counting


@dataclass
class NGramCounts:
    order: int
    vocabulary: list
    counts: dict  # n -> Counter over n-tuples ending in a predicted token

    def total_events(self):
        return sum(self.counts[1].values())

    def context_counts(self, n):
        ctx = Counter()
        for gram, c in self.counts[n].items():
            ctx[gram[:-1]] += c
        return ctx

    def merge(self, other):
        if other.order != self.order:
            raise ValueError("cannot merge counts of different order")
        merged = {n: self.counts[n] + other.counts[n] for n in self.counts}
        vocab = sorted((set(self.vocabulary) | set(other.vocabulary)) - {EOS}) + [EOS]
        return NGramCounts(self.order, vocab, merged)


def count_ngrams(sentences, order):
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    counts = {n: Counter() for n in range(1, order + 1)}
    words = set()
    for sent in sentences:
        words.update(sent)
        padded = [BOS] * (order - 1) + list(sent) + [EOS]
        for i in range(order - 1, len(padded)):
            for n in range(1, order + 1):
                counts[n][tuple(padded[i - n + 1 : i + 1])] += 1
    words.discard(EOS)
    words.discard(BOS)
    return NGramCounts(order, sorted(words) + [EOS], counts)


# ---------------------------------------------------------------------------
# Models


@dataclass(frozen=True)
class Smoothing:
    kind: str = "laplace"
    k: float = 1.0
    lambdas: tuple = ()

    def __post_init__(self):
        if self.kind not in ("laplace", "additive", "interpolated"):
            raise ValueError(f"unknown smoothing {self.kind!r}")
        if self.kind == "laplace" and self.k != 1.0:
            object.__setattr__(self, "k", 1.0)
        if self.kind == "additive" and not self.k > 0:
            raise ValueError("additive smoothing needs k > 0")
        if self.kind == "interpolated":
            lam = tuple(float(x) for x in self.lambdas)
            if not lam or any(x < 0 for x in lam) or abs(sum(lam) - 1.0) > 1e-9:
                raise ValueError("interpolation weights must be non-negative and sum to 1")
            object.__setattr__(self, "lambdas", lam)

    @classmethod
    def laplace(cls):
        return cls("laplace")

    @classmethod
    def additive(cls, k):
        return cls("additive", k=k)

    @classmethod
    def interpolated(cls, *lambdas):
        return cls("interpolated", lambdas=tuple(lambdas))

    def describe(self):
        if self.kind == "additive":
            return f"additive k={self.k:g}"
        if self.kind == "interpolated":
            return "interpolated " + ",".join(f"{x:g}" for x in self.lambdas)
        return self.kind


class NGramModel:
    """Common interface of estimated and file-loaded models.

    Subclasses implement :meth:`prob` for a history already cut to the
    model order.  ``vocab`` holds every predictable token including
    ``</s>``; ``<s>`` is never part of it.
    """

    order = 1
    vocab = ()
    smoothing = None

    def _setup_vocab(self, vocab):
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        if len(self.index) != len(self.vocab):
            raise ValueError("duplicate vocabulary entries")
        if BOS in self.index:
            raise ValueError("<s> cannot be a predicted event")

    @property
    def V(self):
        return len(self.vocab)

    @property
    def has_unk(self):
        return UNK in self.index

    def history(self, context):
        """Trim/pad ``context`` to the ``order - 1`` tokens the model uses."""
        n = self.order - 1
        if n == 0:
            return ()
        context = tuple(context)[-n:] if context else ()
        return (BOS,) * (n - len(context)) + context

    def map_token(self, token):
        if token in self.index or token == BOS:
            return token
        if self.has_unk:
            return UNK
        raise OovToken(f"token {token!r} is outside the LM vocabulary")

    def prob(self, word, history):
        raise NotImplementedError

    def prob_at_order(self, n, word, history):
        raise NotImplementedError

    def logprob(self, word, context=()):
        """Natural-log P(word | context); OOV tokens map to <UNK> when present."""
        word = self.map_token(word)
        hist = tuple(self.map_token(t) for t in self.history(context))
        return math.log(self.prob(word, hist))

    def distribution(self, history):
        hist = self.history(history)
        return np.array([self.prob(w, hist) for w in self.vocab])

    def sentence_log2prob(self, sentence):
        total = 0.0
        ctx = []
        for tok in list(sentence) + [EOS]:
            tok = self.map_token(tok)
            total += math.log2(self.prob(tok, self.history(ctx)))
            ctx.append(tok)
        return total, len(sentence) + 1

    # listing used by the writers: order n -> {ngram: log10 prob}
    def listed(self, n):
        raise NotImplementedError

    @property
    def uses_backoff(self):
        raise NotImplementedError


class CountModel(NGramModel):
    """Closed-form model evaluated directly from n-gram counts."""

    def __init__(self, counts, smoothing, use_unk=False):
        if counts.total_events() == 0:
            raise EmptyCorpus("no events to estimate a language model from")
        self.counts = counts
        self.order = counts.order
        self.smoothing = smoothing
        vocab = list(counts.vocabulary)
        if use_unk and UNK not in vocab:
            vocab.append(UNK)
        self._setup_vocab(vocab)
        if smoothing.kind == "interpolated" and len(smoothing.lambdas) != self.order:
            raise ValueError(f"need {self.order} interpolation weights, got {len(smoothing.lambdas)}")
        self._ctx = {n: counts.context_counts(n) for n in range(1, self.order + 1)}

    def _ml(self, n, word, hist):
        """Maximum-likelihood P(word | hist) at order ``n``, or None if hist unseen."""
        c_h = self._ctx[n].get(hist, 0)
        if c_h == 0:
            return None
        return self.counts.counts[n].get(hist + (word,), 0) / c_h

    def prob_at_order(self, n, word, history):
        """P(word | history) under the order-``n`` model with the same smoothing."""
        hist = tuple(history)[len(history) - (n - 1):] if n > 1 else ()
        V = self.V
        if self.smoothing.kind == "interpolated":
            lam = self.smoothing.lambdas
            mass = 0.0
            weight = 0.0
            for j in range(1, n + 1):
                if lam[j - 1] == 0.0:
                    continue
                ml = self._ml(j, word, hist[len(hist) - (j - 1):] if j > 1 else ())
                if ml is None:
                    continue
                mass += lam[j - 1] * ml
                weight += lam[j - 1]
            base = mass / weight if weight > 0 else 1.0 / V
            return (base + INTERP_EPSILON) / (1.0 + INTERP_EPSILON * V)
        k = self.smoothing.k
        c_hw = self.counts.counts[n].get(hist + (word,), 0)
        c_h = self._ctx[n].get(hist, 0)
        return (c_hw + k) / (c_h + k * V)

    def prob(self, word, history):
        return self.prob_at_order(self.order, word, history)

    @property
    def uses_backoff(self):
        return self.smoothing.kind == "interpolated"

    def listed(self, n):
        """Entries a file must carry so the reader reconstructs the model.

        Closed-form (Laplace/additive) models list observed n-grams only;
        interpolated ones list full distributions of observed histories
        and rely on unit-weight back-off for the rest.
        """
        out = {}
        if n == 1:
            for w in self.vocab:
                out[(w,)] = math.log10(self.prob_at_order(1, w, ()))
            return out
        if self.uses_backoff:
            for hist in sorted(self._ctx[n]):
                for w in self.vocab:
                    out[hist + (w,)] = math.log10(self.prob_at_order(n, w, hist))
        else:
            for gram in sorted(self.counts.counts[n]):
                out[gram] = math.log10(self.prob_at_order(n, gram[-1], gram[:-1]))
        return out


class TableModel(NGramModel):
    """Model rebuilt from listed log10 probabilities (ARPA or binary).

    Unlisted events in a listed history share the remaining mass evenly.
    Unlisted histories are uniform for closed-form files, or back off to
    the next lower order (times the stored back-off weight) otherwise.
    """

    def __init__(self, order, vocab, tables, uses_backoff=False, backoffs=None, smoothing=None):
        self.order = order
        self._setup_vocab(vocab)
        self._uses_backoff = uses_backoff
        self.smoothing = smoothing
        self._log10 = tables  # n -> {ngram: log10p}
        self._backoff = backoffs or {}  # ngram -> log10 bow
        self._by_hist = {}
        for n, table in tables.items():
            grouped = {}
            for gram, lp in table.items():
                grouped.setdefault(gram[:-1], {})[gram[-1]] = 10.0 ** lp
            self._by_hist[n] = grouped
        self._leftover = {}

    @property
    def uses_backoff(self):
        return self._uses_backoff

    def listed(self, n):
        return dict(self._log10.get(n, {}))

    def _remaining(self, n, hist, listed):
        key = (n, hist)
        if key not in self._leftover:
            free = self.V - len(listed)
            self._leftover[key] = max(1.0 - sum(listed.values()), 0.0) / free if free else 0.0
        return self._leftover[key]

    def prob_at_order(self, n, word, history):
        hist = tuple(history)[len(history) - (n - 1):] if n > 1 else ()
        listed = self._by_hist.get(n, {}).get(hist)
        if listed is not None:
            if word in listed:
                return listed[word]
            return self._remaining(n, hist, listed)
        if n == 1 or not self._uses_backoff:
            return 1.0 / self.V
        bow = 10.0 ** self._backoff.get(hist, 0.0)
        return bow * self.prob_at_order(n - 1, word, hist[1:])

    def prob(self, word, history):
        return self.prob_at_order(self.order, word, history)


def estimate(counts, smoothing=None, use_unk=False):
    """Build a smoothed model from ``counts``; Laplace by default."""
    return CountModel(counts, smoothing or Smoothing.laplace(), use_unk=use_unk)


@dataclass
class PerplexityResult:
    log_prob_total: float
    num_events: int
    perplexity: float
    num_sentences: int = 0


def perplexity(model, sentences):
    total = 0.0
    events = 0
    n_sent = 0
    for sent in sentences:
        lp, n = model.sentence_log2prob(sent)
        total += lp
        events += n
        n_sent += 1
    if events == 0:
        raise EmptyCorpus("no sentences to evaluate")
    return PerplexityResult(total, events, 2.0 ** (-total / events), n_sent)


# ---------------------------------------------------------------------------
# ARPA text


def write_arpa(model, path):
    sections = {n: model.listed(n) for n in range(1, model.order + 1)}
    backoff = model.uses_backoff
    lines = []
    if model.smoothing is not None:
        lines.append(f"# smoothing: {model.smoothing.describe()}")
    lines.append("")
    lines.append("\\data\\")
    for n in range(1, model.order + 1):
        extra = 1 if n == 1 else 0  # the <s> unigram
        lines.append(f"ngram {n}={len(sections[n]) + extra}")
    for n in range(1, model.order + 1):
        lines.append("")
        lines.append(f"\\{n}-grams:")
        with_bow = backoff and n < model.order
        if n == 1:
            lines.append(f"-99.0000000000\t{BOS}" + ("\t0.0000" if with_bow else ""))
        grams = [(w,) for w in model.vocab] if n == 1 else sorted(sections[n])
        for gram in grams:
            row = f"{sections[n][gram]:.10f}\t{' '.join(gram)}"
            if with_bow:
                row += "\t0.0000"
            lines.append(row)
    lines.append("")
    lines.append("\\end\\")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_arpa(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptLmFile(f"{path}: cannot read: {exc}") from exc
    lines = text.splitlines()
    try:
        start = next(i for i, ln in enumerate(lines) if ln.strip() == "\\data\\")
    except StopIteration:
        raise CorruptLmFile(f"{path}: missing \\data\\ header") from None
    declared = {}
    i = start + 1
    while i < len(lines) and not lines[i].strip().startswith("\\"):
        m = re.match(r"^\s*ngram\s+(\d+)\s*=\s*(\d+)\s*$", lines[i])
        if m:
            declared[int(m[1])] = int(m[2])
        elif lines[i].strip():
            raise CorruptLmFile(f"{path}:{i + 1}: bad header line {lines[i]!r}")
        i += 1
    if not declared or sorted(declared) != list(range(1, max(declared) + 1)):
        raise CorruptLmFile(f"{path}: ngram counts missing or not contiguous")
    order = max(declared)
    tables = {}
    backoffs = {}
    saw_bow = False
    vocab = []
    n = None
    for j in range(i, len(lines)):
        ln = lines[j].strip()
        if not ln:
            continue
        m = re.match(r"^\\(\d+)-grams:$", ln)
        if m:
            n = int(m[1])
            if n not in declared or n in tables:
                raise CorruptLmFile(f"{path}:{j + 1}: unexpected section {ln}")
            tables[n] = {}
            continue
        if ln == "\\end\\":
            n = None
            break
        if n is None:
            raise CorruptLmFile(f"{path}:{j + 1}: entry outside a section")
        parts = ln.split()
        if len(parts) not in (n + 1, n + 2):
            raise CorruptLmFile(f"{path}:{j + 1}: expected {n}-gram entry, got {ln!r}")
        try:
            lp = float(parts[0])
            bow = float(parts[n + 1]) if len(parts) == n + 2 else None
        except ValueError:
            raise CorruptLmFile(f"{path}:{j + 1}: non-numeric probability") from None
        gram = tuple(parts[1 : n + 1])
        if gram in tables[n] or (n == 1 and gram == (BOS,) and BOS in vocab):
            raise CorruptLmFile(f"{path}:{j + 1}: duplicate entry {' '.join(gram)}")
        if bow is not None:
            saw_bow = True
            backoffs[gram] = bow
        if n == 1:
            if gram == (BOS,):
                vocab.append(BOS)
                continue
            vocab.append(gram[0])
        tables[n][gram] = lp
    else:
        raise CorruptLmFile(f"{path}: missing \\end\\ marker")
    for k, count in declared.items():
        listed = len(tables.get(k, {})) + (1 if k == 1 and BOS in vocab else 0)
        if listed != count:
            raise CorruptLmFile(f"{path}: header declares ngram {k}={count} but {listed} entries found")
    vocab = [w for w in vocab if w != BOS]
    known = set(vocab) | {BOS}
    for k, table in tables.items():
        for gram in table:
            if any(t not in known for t in gram):
                raise CorruptLmFile(f"{path}: {k}-gram {' '.join(gram)} uses a word missing from 1-grams")
    return TableModel(order, vocab, tables, uses_backoff=saw_bow, backoffs=backoffs)


# ---------------------------------------------------------------------------
# Binary

LM_MAGIC = b"MLM1"
LM_VERSION = 1


def write_binary(model, path):
    """Little-endian layout::

        "MLM1" u32 version u8 order u8 flags u32 V
        V x (u32 byte length, UTF-8 word)
        per order: u64 count, count x (order x u32 word index, f32 log10 p)

    Word index ``V`` stands for ``<s>``.  Flag bit 0 selects back-off
    semantics for unlisted histories (unit back-off weight).
    """
    if isinstance(model, TableModel) and any(v != 0.0 for v in model._backoff.values()):
        raise ValueError("binary format only stores unit back-off weights")
    index = dict(model.index)
    index[BOS] = model.V
    out = [LM_MAGIC, struct.pack("<IBBI", LM_VERSION, model.order, int(model.uses_backoff), model.V)]
    for w in model.vocab:
        raw = w.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
    for n in range(1, model.order + 1):
        entries = sorted((tuple(index[t] for t in gram), lp) for gram, lp in model.listed(n).items())
        out.append(struct.pack("<Q", len(entries)))
        if entries:
            rec = np.zeros(len(entries), dtype=[("idx", "<u4", (n,)), ("lp", "<f4")])
            rec["idx"] = [e[0] for e in entries]
            rec["lp"] = [e[1] for e in entries]
            out.append(rec.tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(out))


def read_binary(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CorruptLmFile(f"{path}: cannot read: {exc}") from exc
    if data[:4] != LM_MAGIC:
        raise CorruptLmFile(f"{path}: bad magic {data[:4]!r}")
    try:
        version, order, flags, V = struct.unpack_from("<IBBI", data, 4)
        if version != LM_VERSION:
            raise CorruptLmFile(f"{path}: unsupported version {version}")
        if order not in (1, 2, 3):
            raise CorruptLmFile(f"{path}: bad order {order}")
        pos = 4 + struct.calcsize("<IBBI")
        vocab = []
        for _ in range(V):
            (length,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + length > len(data):
                raise CorruptLmFile(f"{path}: truncated vocabulary")
            vocab.append(data[pos : pos + length].decode("utf-8"))
            pos += length
        words = vocab + [BOS]
        tables = {}
        for n in range(1, order + 1):
            (count,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            dtype = np.dtype([("idx", "<u4", (n,)), ("lp", "<f4")])
            size = count * dtype.itemsize
            if pos + size > len(data):
                raise CorruptLmFile(f"{path}: truncated {n}-gram section")
            rec = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
            pos += size
            if count and rec["idx"].max() > V:
                raise CorruptLmFile(f"{path}: word index out of range in {n}-grams")
            tables[n] = {
                tuple(words[i] for i in np.atleast_1d(idx)): float(lp)
                for idx, lp in zip(rec["idx"], rec["lp"])
            }
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptLmFile(f"{path}: truncated or malformed: {exc}") from exc
    if pos != len(data):
        raise CorruptLmFile(f"{path}: {len(data) - pos} trailing bytes")
    return TableModel(order, vocab, tables, uses_backoff=bool(flags & 1))
