"""Time-synchronous Viterbi beam search over words, fillers and LM histories.

The search space is a loop of word HMM chains replicated for every LM
history (full n-gram history expansion).  Word exits pay the weighted LM
score and move to the successor history; fillers and silence loop back
into the same history.  Word-level back-pointers are kept as link
records, so memory is O(T * histories).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acoustic import NUM_STATES, unit_labels
from .corpus import SIL, format_transcription_line, is_filler_token
from .errors import (EmptyFeatures, MiniAsrError, MissingPronunciation,
                     NoSurvivingPath)
from .frontend import read_feat_checked
from .lm import BOS, EOS, UNK

log = logging.getLogger(__name__)

SIL_TOKEN = "<sil>"
NEG_INF = -np.inf


@dataclass
class DecodeConfig:
    beam_logwidth: float = 200.0
    language_weight: float = 6.5
    word_insertion_penalty: float = 0.0
    filler_insertion_penalty: float = -2.0
    silence_insertion_penalty: float = 0.0
    max_active: int = None

    def __post_init__(self):
        if not self.beam_logwidth > 0:
            raise ValueError("beam_logwidth must be positive (inf disables pruning)")
        if self.language_weight < 0:
            raise ValueError("language_weight must be >= 0")
        if self.max_active is not None and self.max_active < 1:
            raise ValueError("max_active must be >= 1")


@dataclass
class Hypothesis:
    word_sequence: list
    total_score: float
    acoustic_score: float
    lm_score: float
    penalty_score: float = 0.0
    utterance_id: str = ""

    def tokens(self):
        """Word sequence without silence markers (fillers kept)."""
        return [w for w in self.word_sequence if w != SIL_TOKEN]


@dataclass
class Unit:
    token: str
    kind: str  # "word", "filler" or "sil"
    word_index: int
    phys: np.ndarray
    self_lp: np.ndarray
    next_lp: np.ndarray


@dataclass
class HistoryGraph:
    """Word-level automaton driving the search.

    ``next`` (H, W) gives the successor history (-1 forbids the word);
    ``lm`` (H, W) and ``final`` (H,) are natural-log LM scores.
    """

    next: np.ndarray
    lm: np.ndarray
    final: np.ndarray
    start: int = 0
    labels: list = field(default_factory=list)

    @property
    def num_histories(self):
        return len(self.final)


class SearchGraph:
    def __init__(self, units, words, histories, model):
        self.units = units
        self.words = words
        self.histories = histories
        self.model = model
        self.used_phys, local = np.unique(np.concatenate([u.phys for u in units]), return_inverse=True)
        self.phys_local = local
        sizes = [len(u.phys) for u in units]
        ends = np.cumsum(sizes)
        self.first_idx = ends - sizes
        self.last_idx = ends - 1
        self.self_lp = np.concatenate([u.self_lp for u in units])
        self.next_lp = np.concatenate([u.next_lp for u in units])
        self.unit_word = np.array([u.word_index for u in units])
        self.unit_kind = [u.kind for u in units]

    @property
    def num_histories(self):
        return self.histories.num_histories

    def word_units(self):
        return [u for u in self.units if u.kind == "word"]

    def entry_costs(self, cfg):
        table = {"word": cfg.word_insertion_penalty, "filler": cfg.filler_insertion_penalty,
                 "sil": cfg.silence_insertion_penalty}
        return np.array([table[k] for k in self.unit_kind], dtype=np.float64)

    def emission_scores(self, frames):
        """(T, used states) log-likelihoods for the states of this graph."""
        ll, _ = self.model.log_likelihoods(frames, self.used_phys)
        return ll


def _make_unit(token, kind, word_index, phones, model):
    hmms = [model.resolve(lab) for lab in unit_labels(phones, kind == "word", model)]
    phys = np.array([s for h in hmms for s in h.state_ids], dtype=np.intp)
    with np.errstate(divide="ignore"):
        self_lp = np.log(np.concatenate([np.diag(h.transitions[:, :NUM_STATES]) for h in hmms]))
        next_lp = np.log(np.concatenate([[h.transitions[i, i + 1] for i in range(NUM_STATES)] for h in hmms]))
    return Unit(token, kind, word_index, phys, self_lp, next_lp)


def lm_histories(lm, words):
    """Enumerate reachable histories and their word transitions/scores."""
    n = lm.order - 1
    start = (BOS,) * n
    index = {start: 0}
    order = [start]
    rows = []
    i = 0
    while i < len(order):
        h = order[i]
        nxt = []
        for w in words:
            h2 = (h + (w,))[1:] if n else ()
            if h2 not in index:
                index[h2] = len(order)
                order.append(h2)
            nxt.append(index[h2])
        rows.append(nxt)
        i += 1
    lm_tab = np.array([[lm.logprob(w, h) for w in words] for h in order])
    final = np.array([lm.logprob(EOS, h) for h in order])
    return HistoryGraph(np.array(rows, dtype=np.intp).reshape(len(order), len(words)), lm_tab, final, 0,
                        [" ".join(h) for h in order])


def build_search_graph(dictionary, fillers, lm, am):
    """Decoding graph over the LM vocabulary.

    Every LM word (except ``</s>`` and ``<UNK>``) needs a pronunciation;
    each pronunciation becomes a separate word unit.  All fillers plus a
    silence unit are insertable anywhere without touching LM history.
    """
    words = [w for w in lm.vocab if w not in (EOS, UNK)]
    missing = [w for w in words if w not in dictionary]
    if missing:
        raise MissingPronunciation(missing)
    units = []
    for wi, w in enumerate(words):
        for pron in dictionary[w]:
            units.append(_make_unit(w, "word", wi, tuple(pron), am))
    units.append(_make_unit(SIL_TOKEN, "sil", -1, (SIL,), am))
    for tok, phone in fillers.entries.items():
        units.append(_make_unit(tok, "sil" if phone == SIL else "filler", -1, (phone,), am))
    return SearchGraph(units, words, lm_histories(lm, words), am)


def reference_histories(graph, lm, tokens):
    """History automaton that only accepts ``tokens`` (fillers stay free)."""
    words = [t for t in tokens if not is_filler_token(t) and t != SIL_TOKEN]
    index = {w: i for i, w in enumerate(graph.words)}
    N = len(words)
    nxt = np.full((N + 1, len(graph.words)), -1, dtype=np.intp)
    lm_tab = np.full((N + 1, len(graph.words)), NEG_INF)
    final = np.full(N + 1, NEG_INF)
    for i, w in enumerate(words):
        if w not in index:
            raise MissingPronunciation([w])
        nxt[i, index[w]] = i + 1
        lm_tab[i, index[w]] = lm.logprob(w, words[:i])
    final[N] = lm.logprob(EOS, words)
    return HistoryGraph(nxt, lm_tab, final, 0)


def _trace(links, link_id, graph):
    units = []
    while link_id >= 0:
        prev, u = links[link_id][0], links[link_id][1]
        units.append(u)
        link_id = prev
    return units[::-1]


def _search(graph, frames, cfg, hist):
    X = np.asarray(getattr(frames, "frames", frames), dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyFeatures("no feature frames to decode")
    ll = graph.emission_scores(X)
    H, U = hist.num_histories, len(graph.units)
    Ls = len(graph.self_lp)
    first, last = graph.first_idx, graph.last_idx
    entry = graph.entry_costs(cfg)
    lw = cfg.language_weight

    # exit targets and weighted LM costs per (history, unit)
    tgt = np.tile(np.arange(H)[:, None], (1, U))
    exit_cost = np.zeros((H, U))
    is_word = graph.unit_word >= 0
    wi = graph.unit_word[is_word]
    tgt[:, is_word] = hist.next[:, wi]
    with np.errstate(invalid="ignore"):
        exit_cost[:, is_word] = np.where(hist.next[:, wi] >= 0, lw * hist.lm[:, wi], NEG_INF)
        final_cost = np.where(np.isfinite(hist.final), lw * hist.final, NEG_INF)
    tgt = np.where(tgt >= 0, tgt, 0)
    tgt_flat = tgt.ravel()

    delta = np.full((H, Ls), NEG_INF)
    ac = np.zeros((H, Ls))
    link = np.full((H, Ls), -1, dtype=np.int64)
    B = np.full(H, NEG_INF)
    B[hist.start] = 0.0
    B_ac = np.zeros(H)
    B_link = np.full(H, -1, dtype=np.int64)
    links = []
    not_first = np.ones(Ls, dtype=bool)
    not_first[first] = False

    for t in range(len(X)):
        e = ll[t, graph.phys_local]
        cand = np.full((3, H, Ls), NEG_INF)
        cand_ac = np.zeros((3, H, Ls))
        cand_link = np.full((3, H, Ls), -1, dtype=np.int64)
        cand[0] = delta + graph.self_lp
        cand_ac[0] = ac + graph.self_lp
        cand_link[0] = link
        moved = delta + graph.next_lp
        cand[1, :, 1:] = np.where(not_first[1:], moved[:, :-1], NEG_INF)
        cand_ac[1, :, 1:] = (ac + graph.next_lp)[:, :-1]
        cand_link[1, :, 1:] = link[:, :-1]
        cand[2][:, first] = B[:, None] + entry[None, :]
        cand_ac[2][:, first] = B_ac[:, None]
        cand_link[2][:, first] = B_link[:, None]
        k = np.argmax(cand, axis=0)[None]
        delta = np.take_along_axis(cand, k, 0)[0] + e
        ac = np.take_along_axis(cand_ac, k, 0)[0] + e
        link = np.take_along_axis(cand_link, k, 0)[0]

        best = delta.max()
        if not np.isfinite(best):
            raise NoSurvivingPath(f"all hypotheses pruned at frame {t}")
        if np.isfinite(cfg.beam_logwidth):
            delta[delta < best - cfg.beam_logwidth] = NEG_INF
        if cfg.max_active is not None:
            flat = delta.ravel()
            if np.count_nonzero(np.isfinite(flat)) > cfg.max_active:
                kth = np.partition(flat, len(flat) - cfg.max_active)[len(flat) - cfg.max_active]
                delta[delta < kth] = NEG_INF

        ex = delta[:, last] + graph.next_lp[last]
        score = (ex + exit_cost).ravel()
        B = np.full(H, NEG_INF)
        ok = np.flatnonzero(np.isfinite(score))
        if len(ok):
            order = ok[np.lexsort((ok, -score[ok], tgt_flat[ok]))]
            heads = order[np.r_[True, tgt_flat[order][1:] != tgt_flat[order][:-1]]]
            ex_ac = (ac[:, last] + graph.next_lp[last]).ravel()
            link_last = link[:, last].ravel()
            for f in heads:
                h2 = tgt_flat[f]
                h, u = divmod(int(f), U)
                B[h2] = score[f]
                B_ac[h2] = ex_ac[f]
                B_link[h2] = len(links)
                links.append((int(link_last[f]), u, h, t))

    final = B + final_cost
    top = final.max()
    if not np.isfinite(top):
        raise NoSurvivingPath("no hypothesis reached a valid utterance end")
    candidates = []
    for h in np.flatnonzero(final == top):
        units = _trace(links, int(B_link[h]), graph)
        candidates.append(([graph.units[u].token for u in units], units, int(h)))
    tokens, units, h_end = min(candidates, key=lambda c: c[0])

    lm_score = 0.0
    penalty = 0.0
    h = hist.start
    for u in units:
        penalty += entry[u]
        w = graph.unit_word[u]
        if w >= 0:
            lm_score += hist.lm[h, w]
            h = hist.next[h, w]
    lm_score += hist.final[h]
    return Hypothesis(tokens, float(top), float(B_ac[h_end]), float(lm_score), float(penalty))


def decode(features, graph, cfg=None, utterance_id=None):
    """Most likely token sequence for ``features``.

    With ``beam_logwidth=inf`` and no ``max_active`` the result is the exact
    Viterbi optimum; equal-score endings resolve to the lexicographically
    smallest token sequence.
    """
    cfg = cfg or DecodeConfig()
    hyp = _search(graph, features, cfg, graph.histories)
    hyp.utterance_id = utterance_id or getattr(features, "utterance_id", "")
    return hyp


def forced_score(features, graph, lm, tokens, cfg=None):
    """Best score of any path through ``graph`` emitting the words of ``tokens``."""
    cfg = cfg or DecodeConfig()
    return _search(graph, features, cfg, reference_histories(graph, lm, tokens))


@dataclass
class BatchResult:
    hypotheses: dict
    failures: dict

    def __len__(self):
        return len(self.hypotheses)


def batch_decode(manifest, am, lm, cfg=None, graph=None, features=None, split="test"):
    """Decode every utterance of ``split``; failures are recorded, not raised.

    Features come from ``features[uid]`` when given, otherwise from the
    manifest's feature directory.
    """
    cfg = cfg or DecodeConfig()
    graph = graph or build_search_graph(manifest.dictionary, manifest.fillers, lm, am)
    ts = getattr(manifest, split)
    fileids = ts.fileid_map()
    hyps, failures = {}, {}
    for uid, _ in ts.utterances:
        try:
            if features is not None:
                feats = features[uid]
            else:
                feats = read_feat_checked(manifest.feat_path(fileids.get(uid, uid)), am.feature_dim, uid)
            hyps[uid] = decode(feats, graph, cfg, uid)
        except (MiniAsrError, KeyError) as exc:
            log.warning("%s: decode failed: %s", uid, exc)
            failures[uid] = str(exc)
    return BatchResult(hyps, failures)


def format_hypotheses(hyps):
    return "".join(format_transcription_line(uid, h.tokens()) for uid, h in hyps.items())


def write_hypotheses(hyps, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(format_hypotheses(hyps), encoding="utf-8")
