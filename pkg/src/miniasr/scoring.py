"""Word-level scoring of hypotheses against reference transcriptions."""

import json
import re
from dataclasses import dataclass, field

from .corpus import is_filler_token
from .errors import EmptyTestSet
from .lm import BOS, EOS

NONSCORING = {BOS, EOS, "<sil>"}

# alignment operations
MATCH, SUB, DEL, INS = "C", "S", "D", "I"
_PREFERENCE = (MATCH, SUB, DEL, INS)


def strip_nonscoring(tokens, fillers=None):
    """Drop fillers, sentence markers and silence.

    Anything shaped ``++TAG++`` counts as a filler; ``fillers`` may name
    extra tokens to drop.
    """
    extra = set(fillers or ())
    return [t for t in tokens if t not in NONSCORING and t not in extra and not is_filler_token(t)]


@dataclass
class Alignment:
    ops: list  # (op, ref_token or None, hyp_token or None)

    def count(self, op):
        return sum(1 for o, _, _ in self.ops if o == op)

    @property
    def hits(self):
        return self.count(MATCH)

    @property
    def substitutions(self):
        return self.count(SUB)

    @property
    def deletions(self):
        return self.count(DEL)

    @property
    def insertions(self):
        return self.count(INS)

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions


def align(ref, hyp):
    """Minimum edit-distance alignment (unit costs).

    Among equal-cost alignments the traceback prefers, at every step from
    the end, a match over a substitution over a deletion over an insertion.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    # plain lists: scalar numpy indexing dominates on short strings
    d = [[i + j if i == 0 or j == 0 else 0 for j in range(m + 1)] for i in range(n + 1)]
    for i in range(1, n + 1):
        prev, row, r = d[i - 1], d[i], ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    ops = []
    i, j = n, m
    while i or j:
        for op in _PREFERENCE:
            if op == MATCH and i and j and ref[i - 1] == hyp[j - 1] and d[i][j] == d[i - 1][j - 1]:
                ops.append((MATCH, ref[i - 1], hyp[j - 1]))
                i, j = i - 1, j - 1
                break
            if op == SUB and i and j and ref[i - 1] != hyp[j - 1] and d[i][j] == d[i - 1][j - 1] + 1:
                ops.append((SUB, ref[i - 1], hyp[j - 1]))
                i, j = i - 1, j - 1
                break
            if op == DEL and i and d[i][j] == d[i - 1][j] + 1:
                ops.append((DEL, ref[i - 1], None))
                i -= 1
                break
            if op == INS and j and d[i][j] == d[i][j - 1] + 1:
                ops.append((INS, None, hyp[j - 1]))
                j -= 1
                break
    return Alignment(ops[::-1])


@dataclass
class Counts:
    sentences: int = 0
    sentence_errors: int = 0
    words: int = 0
    hits: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0

    def add(self, other):
        for k in self.__dataclass_fields__:
            setattr(self, k, getattr(self, k) + getattr(other, k))
        return self

    @property
    def percent_correct(self):
        return 100.0 * self.hits / self.words if self.words else float("nan")

    @property
    def percent_accuracy(self):
        return 100.0 * (self.hits - self.insertions) / self.words if self.words else float("nan")

    @property
    def sentence_error_rate(self):
        return 100.0 * self.sentence_errors / self.sentences if self.sentences else float("nan")

    def as_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(percent_correct=self.percent_correct, percent_accuracy=self.percent_accuracy,
                 sentence_error_rate=self.sentence_error_rate)
        return d


@dataclass
class ScoreReport:
    groups: dict = field(default_factory=dict)  # group key -> Counts, sorted by key
    total: Counts = field(default_factory=Counts)
    alignments: list = field(default_factory=list)
    missing: list = field(default_factory=list)

    @property
    def percent_correct(self):
        return self.total.percent_correct

    @property
    def percent_accuracy(self):
        return self.total.percent_accuracy

    @property
    def percent_ser(self):
        return self.total.sentence_error_rate

    def render(self):
        head = f"{'Speaker':<16}{'Sent':>6}{'Words':>7}{'% Correct':>11}{'% Accuracy':>12}{'% SER':>8}"
        rows = [head, "-" * len(head)]
        for name, c in list(self.groups.items()) + [("Total", self.total)]:
            rows.append(f"{name:<16}{c.sentences:>6}{c.words:>7}{c.percent_correct:>11.2f}"
                        f"{c.percent_accuracy:>12.2f}{c.sentence_error_rate:>8.2f}")
        return "\n".join(rows) + "\n"

    def summary(self):
        recs = [dict(group=k, **v.as_dict()) for k, v in self.groups.items()]
        recs.append(dict(group="Total", **self.total.as_dict()))
        return {"records": recs, "missing_hypotheses": list(self.missing)}

    def to_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def utterance_counts(ref, hyp):
    a = align(strip_nonscoring(ref), strip_nonscoring(hyp))
    c = Counts(1, int(a.errors > 0), a.hits + a.substitutions + a.deletions,
               a.hits, a.substitutions, a.deletions, a.insertions)
    return c, a


def score(pairs):
    """Pool ``(ref, hyp, group_key)`` triples into a report.

    Fillers and markers are stripped from both sides first.  Group and
    total percentages come from summed raw counts.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyTestSet("nothing to score")
    report = ScoreReport()
    for ref, hyp, key in pairs:
        c, a = utterance_counts(ref, hyp)
        report.alignments.append(a)
        report.total.add(c)
        report.groups.setdefault(key, Counts()).add(c)
    report.groups = dict(sorted(report.groups.items()))
    return report


def group_key(uid, pattern=None):
    """Group name of an utterance id: first regex group, whole match, or ``ALL``."""
    if not pattern:
        return "ALL"
    m = re.search(pattern, uid)
    if not m:
        return "other"
    return m.group(1) if m.groups() else m.group(0)


def score_transcripts(references, hypotheses, group_pattern=None):
    """Score ``{uid: tokens}`` hypotheses against ordered ``(uid, tokens)`` references.

    A reference without a hypothesis counts as an empty hypothesis and is
    listed in ``report.missing``.
    """
    refs = list(references.items()) if isinstance(references, dict) else list(references)
    pairs, missing = [], []
    for uid, ref in refs:
        if uid not in hypotheses:
            missing.append(uid)
        pairs.append((ref, hypotheses.get(uid, []), group_key(uid, group_pattern)))
    report = score(pairs)
    report.missing = missing
    return report
