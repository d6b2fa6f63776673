"""HMM-GMM acoustic models: topology, composition, training and storage.

Every phone is a 3-state left-to-right HMM without skips.  Each emitting
state owns a diagonal-covariance Gaussian mixture; these "physical"
states live in stacked arrays so emissions for many states are computed
in one shot.  Context-dependent models add triphone HMMs ``L-B+R`` and a
tying map from triphone states to physical states.
"""

import logging
import re
import struct
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import SIL, is_filler_token
from .errors import (BadSchedule, CorruptModelFile, MiniAsrError, NoTrainingData,
                     UnknownToken)
from .hmm import NEG_INF, Trellis, logsumexp

log = logging.getLogger(__name__)

NUM_STATES = 3
EXIT = NUM_STATES  # column of the exit transition
DEFAULT_VARIANCE_FLOOR = 1e-4
DEFAULT_WEIGHT_FLOOR = 1e-5
MAX_MIXTURES = 8
_LOG_2PI = np.log(2.0 * np.pi)
_TRIPHONE_RE = re.compile(r"^(?P<left>[^-+]+)-(?P<base>[^-+]+)\+(?P<right>[^-+]+)$")


def default_transitions():
    t = np.zeros((NUM_STATES, NUM_STATES + 1))
    for i in range(NUM_STATES):
        t[i, i] = 0.5
        t[i, i + 1] = 0.5
    return t


def triphone_label(left, base, right):
    return f"{left}-{base}+{right}"


def split_triphone(label):
    """``'A-B+C'`` -> ``('A', 'B', 'C')``; None for context-independent labels."""
    m = _TRIPHONE_RE.match(label)
    return (m["left"], m["base"], m["right"]) if m else None


def word_triphones(pron):
    """Word-internal triphone labels; word edges take SIL as context."""
    padded = [SIL] + list(pron) + [SIL]
    return [triphone_label(padded[i - 1], padded[i], padded[i + 1]) for i in range(1, len(padded) - 1)]


# ---------------------------------------------------------------------------
# Gaussian mixtures


def component_log_likelihoods(X, weights, means, variances):
    """log(w_m N(x_t; mu_m, diag var_m)) for stacked states.

    X: (T, D); weights (P, M); means, variances (P, M, D) -> (T, P, M).
    """
    X = np.asarray(X, dtype=np.float64)
    prec = 1.0 / variances
    const = np.log(weights) - 0.5 * (X.shape[1] * _LOG_2PI + np.log(variances).sum(axis=-1))
    P, M, D = means.shape
    mu = means.reshape(P * M, D)
    pr = prec.reshape(P * M, D)
    quad = (X * X) @ pr.T - 2.0 * X @ (mu * pr).T + (mu * mu * pr).sum(axis=1)
    with np.errstate(divide="ignore"):
        return const[None] - 0.5 * quad.reshape(len(X), P, M)


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))

    @property
    def num_components(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    def component_log_likelihoods(self, X):
        return component_log_likelihoods(np.atleast_2d(X), self.weights[None], self.means[None],
                                         self.variances[None])[:, 0, :]

    def log_likelihood(self, X):
        return logsumexp(self.component_log_likelihoods(X), axis=1)

    def split(self):
        """Double the component count: means move +-0.2 std, weights halve."""
        sd = np.sqrt(self.variances)
        means = np.empty((2 * self.num_components, self.dim))
        means[0::2] = self.means + 0.2 * sd
        means[1::2] = self.means - 0.2 * sd
        return GaussianMixture(np.repeat(self.weights / 2.0, 2), means,
                               np.repeat(self.variances, 2, axis=0), self.variance_floor)

    def reestimate(self, X, weight_floor=DEFAULT_WEIGHT_FLOOR, occupancy=None):
        """One EM step on data ``X`` (optionally frame-weighted by ``occupancy``)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        occ_t = np.ones(len(X)) if occupancy is None else np.asarray(occupancy, dtype=np.float64)
        comp = self.component_log_likelihoods(X)
        post = np.exp(comp - logsumexp(comp, axis=1)[:, None]) * occ_t[:, None]
        occ = post.sum(axis=0)
        centred = X[:, None, :] - self.means[None]
        sx = np.einsum("tm,tmd->md", post, centred)
        sx2 = np.einsum("tm,tmd->md", post, centred * centred)
        w, mu, var = _update_mixture(self.weights, self.means, self.variances, occ, sx, sx2,
                                     self.variance_floor, weight_floor)
        return GaussianMixture(w, mu, var, self.variance_floor)


def _update_mixture(weights, means, variances, occ, sx, sx2, var_floor, weight_floor):
    """M-step for one state from statistics centred on the current means."""
    weights, means, variances = weights.copy(), means.copy(), variances.copy()
    total = occ.sum()
    if total <= 0:
        return weights, means, variances
    live = occ > 1e-10
    shift = sx[live] / occ[live, None]
    means[live] = means[live] + shift
    variances[live] = np.maximum(sx2[live] / occ[live, None] - shift * shift, var_floor)
    w = np.maximum(occ / total, weight_floor)
    return w / w.sum(), means, variances


# ---------------------------------------------------------------------------
# Model


@dataclass
class PhoneHmm:
    label: str
    state_ids: tuple
    transitions: np.ndarray = field(default_factory=default_transitions)

    def __post_init__(self):
        self.state_ids = tuple(int(s) for s in self.state_ids)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        if len(self.state_ids) != NUM_STATES or self.transitions.shape != (NUM_STATES, NUM_STATES + 1):
            raise ValueError("phone HMMs have exactly 3 emitting states")


class AcousticModel:
    """Phone HMMs over a pool of physical GMM states.

    weights (P, M), means and variances (P, M, D) hold every physical
    state; ``phone_hmms`` maps labels to HMMs indexing into that pool and
    ``tying`` maps ``(triphone, state)`` to a physical state id.
    """

    def __init__(self, kind, weights, means, variances, phone_hmms, tying=None,
                 variance_floor=DEFAULT_VARIANCE_FLOOR, weight_floor=DEFAULT_WEIGHT_FLOOR):
        if kind not in ("CI", "CD"):
            raise ValueError("kind must be 'CI' or 'CD'")
        self.kind = kind
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.variances = np.asarray(variances, dtype=np.float64)
        self.phone_hmms = dict(phone_hmms)
        self.tying = dict(tying or {})
        self.variance_floor = float(variance_floor)
        self.weight_floor = float(weight_floor)

    @property
    def num_states(self):
        return self.weights.shape[0]

    @property
    def num_mixtures(self):
        return self.weights.shape[1]

    @property
    def feature_dim(self):
        return self.means.shape[2]

    def state(self, p):
        return GaussianMixture(self.weights[p], self.means[p], self.variances[p], self.variance_floor)

    def copy(self):
        hmms = {k: PhoneHmm(h.label, h.state_ids, h.transitions.copy()) for k, h in self.phone_hmms.items()}
        return AcousticModel(self.kind, self.weights.copy(), self.means.copy(), self.variances.copy(),
                             hmms, dict(self.tying), self.variance_floor, self.weight_floor)

    def resolve(self, label):
        """HMM used for ``label``.

        The returned HMM's label names the owner of its transitions: a
        dedicated triphone owns its own, a tied or unseen triphone borrows
        its base phone's.
        """
        hmm = self.phone_hmms.get(label)
        if hmm is not None:
            return hmm
        parts = split_triphone(label)
        if parts is None or parts[1] not in self.phone_hmms:
            raise UnknownToken(f"no HMM for phone {label!r}")
        base = self.phone_hmms[parts[1]]
        if (label, 0) in self.tying:
            ids = tuple(self.tying[(label, i)] for i in range(NUM_STATES))
            return PhoneHmm(base.label, ids, base.transitions)
        return base

    def log_likelihoods(self, X, state_ids):
        """(T, len(state_ids)) state log-likelihoods and per-component parts."""
        ids = np.asarray(state_ids, dtype=np.intp)
        comp = component_log_likelihoods(X, self.weights[ids], self.means[ids], self.variances[ids])
        return logsumexp(comp, axis=2), comp

    def check(self, tol=1e-9):
        """Raise ValueError if a stochasticity or floor invariant is broken."""
        if not np.all(np.isfinite(self.means)) or not np.all(np.isfinite(self.variances)):
            raise ValueError("non-finite parameters")
        if np.any(np.abs(self.weights.sum(axis=1) - 1.0) > tol):
            raise ValueError("mixture weights do not sum to one")
        if np.any(self.variances < self.variance_floor):
            raise ValueError("variance below floor")
        for hmm in self.phone_hmms.values():
            if np.any(np.abs(hmm.transitions.sum(axis=1) - 1.0) > tol):
                raise ValueError(f"{hmm.label}: transition rows do not sum to one")
            if np.any(np.triu(hmm.transitions, 2) != 0) or np.any(np.tril(hmm.transitions, -1) != 0):
                raise ValueError(f"{hmm.label}: skip or backward transition present")


def _unit_phones(token, dictionary, fillers):
    if is_filler_token(token):
        if token not in fillers:
            raise UnknownToken(f"filler {token} is not in the filler dictionary")
        return [(fillers[token],)]
    if token not in dictionary:
        raise UnknownToken(f"token {token} is not in the dictionary")
    return [tuple(p) for p in dictionary[token]]


def unit_labels(phones, is_word, model):
    if model.kind == "CD" and is_word:
        return word_triphones(phones)
    return list(phones)


# ---------------------------------------------------------------------------
# Composite utterance HMMs


@dataclass
class CompositeHmm:
    """State-level graph for one utterance.

    ``phys`` maps nodes to physical states; ``owner``/``local`` tell which
    phone HMM row each node's outgoing transitions belong to.
    """

    phys: np.ndarray
    log_start: np.ndarray
    log_trans: np.ndarray
    log_final: np.ndarray
    owner: list
    local: np.ndarray
    node_unit: np.ndarray
    unit_labels: list

    @property
    def num_states(self):
        return len(self.phys)

    def trellis(self):
        return Trellis(self.log_start, self.log_trans, self.log_final)


def _assemble(units, unit_arcs, start_units, final_units, model):
    """Expand a phone-level graph into a :class:`CompositeHmm`."""
    S = NUM_STATES * len(units)
    phys = np.zeros(S, dtype=np.intp)
    owner, local = [], np.tile(np.arange(NUM_STATES), len(units))
    log_trans = np.full((S, S), NEG_INF)
    log_start = np.full(S, NEG_INF)
    log_final = np.full(S, NEG_INF)
    hmms = []
    with np.errstate(divide="ignore"):
        for u, label in enumerate(units):
            hmm = model.resolve(label)
            hmms.append(hmm)
            base = NUM_STATES * u
            phys[base : base + NUM_STATES] = hmm.state_ids
            owner.extend([hmm.label] * NUM_STATES)
            lt = np.log(hmm.transitions)
            for i in range(NUM_STATES):
                log_trans[base + i, base + i] = lt[i, i]
                if i + 1 < NUM_STATES:
                    log_trans[base + i, base + i + 1] = lt[i, i + 1]
        for u, v, lp in unit_arcs:
            src, dst = NUM_STATES * u + NUM_STATES - 1, NUM_STATES * v
            val = np.log(hmms[u].transitions[-1, EXIT]) + lp
            log_trans[src, dst] = np.logaddexp(log_trans[src, dst], val)
        for u, lp in start_units:
            log_start[NUM_STATES * u] = np.logaddexp(log_start[NUM_STATES * u], lp)
        for u, lp in final_units:
            src = NUM_STATES * u + NUM_STATES - 1
            log_final[src] = np.logaddexp(log_final[src], np.log(hmms[u].transitions[-1, EXIT]) + lp)
    node_unit = np.repeat(np.arange(len(units)), NUM_STATES)
    return CompositeHmm(phys, log_start, log_trans, log_final, owner, local, node_unit, list(units))


def compile_utterance_hmm(tokens, dictionary, fillers, model, optional_silence=True):
    """Chain phone HMMs for ``tokens`` between mandatory SILs.

    Alternative pronunciations become equiprobable parallel branches and
    a skippable SIL sits between consecutive tokens (both branches of the
    skip get probability 1/2).
    """
    units, arcs = [], []

    def add(label):
        units.append(label)
        return len(units) - 1

    first = add(SIL)
    frontier = [(first, 0.0)]
    half = np.log(0.5)
    for k, tok in enumerate(tokens):
        prons = _unit_phones(tok, dictionary, fillers)
        if k > 0 and optional_silence:
            sil = add(SIL)
            arcs.extend((u, sil, lp + half) for u, lp in frontier)
            frontier = [(u, lp + half) for u, lp in frontier] + [(sil, 0.0)]
        branch = -np.log(len(prons))
        new_frontier = []
        for pron in prons:
            labels = unit_labels(pron, not is_filler_token(tok), model)
            ids = [add(lab) for lab in labels]
            arcs.extend((u, ids[0], lp + branch) for u, lp in frontier)
            arcs.extend((a, b, 0.0) for a, b in zip(ids, ids[1:]))
            new_frontier.append((ids[-1], 0.0))
        frontier = new_frontier
    if tokens:
        last = add(SIL)
        arcs.extend((u, last, lp) for u, lp in frontier)
        finals = [(last, 0.0)]
    else:
        finals = frontier
    return _assemble(units, arcs, [(first, 0.0)], finals, model)


def linear_labels(tokens, dictionary, fillers, model):
    """Phone labels on the canonical path: first pronunciations, no optional SIL."""
    labels = [SIL]
    for tok in tokens:
        pron = _unit_phones(tok, dictionary, fillers)[0]
        labels.extend(unit_labels(pron, not is_filler_token(tok), model))
    if tokens:
        labels.append(SIL)
    return labels


# ---------------------------------------------------------------------------
# Training statistics


@dataclass
class TrainingStats:
    occ: np.ndarray          # (P, M)
    sum_x: np.ndarray        # (P, M, D), centred on the model means
    sum_x2: np.ndarray       # (P, M, D)
    trans: dict = field(default_factory=dict)  # owner label -> (3, 4)
    total_log_likelihood: float = 0.0
    num_frames: int = 0
    num_utterances: int = 0
    num_skipped: int = 0

    @classmethod
    def zeros(cls, model):
        P, M, D = model.means.shape
        return cls(np.zeros((P, M)), np.zeros((P, M, D)), np.zeros((P, M, D)))

    def merge(self, other):
        trans = {k: v.copy() for k, v in self.trans.items()}
        for k, v in other.trans.items():
            trans[k] = trans[k] + v if k in trans else v.copy()
        return TrainingStats(self.occ + other.occ, self.sum_x + other.sum_x, self.sum_x2 + other.sum_x2,
                             trans, self.total_log_likelihood + other.total_log_likelihood,
                             self.num_frames + other.num_frames,
                             self.num_utterances + other.num_utterances,
                             self.num_skipped + other.num_skipped)

    __add__ = merge


def _frames(feats):
    return np.asarray(getattr(feats, "frames", feats), dtype=np.float64)


def forward_backward(hmm, model, features, stats=None):
    """Accumulate Baum-Welch statistics for one utterance.

    Returns ``(stats, log P(O | hmm))``.  ``stats`` is updated in place
    when given.
    """
    X = _frames(features)
    if stats is None:
        stats = TrainingStats.zeros(model)
    uniq, inv = np.unique(hmm.phys, return_inverse=True)
    state_ll, comp_ll = model.log_likelihoods(X, uniq)
    log_b = state_ll[:, inv]
    loglik, gamma, (src, dst), xi, final_occ = hmm.trellis().posteriors(log_b)

    onehot = np.zeros((hmm.num_states, len(uniq)))
    onehot[np.arange(hmm.num_states), inv] = 1.0
    gamma_u = gamma @ onehot
    with np.errstate(under="ignore"):
        post = gamma_u[:, :, None] * np.exp(comp_ll - state_ll[:, :, None])
    stats.occ[uniq] += post.sum(axis=0)
    for j, p in enumerate(uniq):
        centred = X[:, None, :] - model.means[p][None]
        stats.sum_x[p] += np.einsum("tm,tmd->md", post[:, j], centred)
        stats.sum_x2[p] += np.einsum("tm,tmd->md", post[:, j], centred * centred)

    same = hmm.node_unit[src] == hmm.node_unit[dst]
    cols = np.where(same, hmm.local[dst], EXIT)
    for s, c, v in zip(src, cols, xi):
        acc = stats.trans.setdefault(hmm.owner[s], np.zeros((NUM_STATES, NUM_STATES + 1)))
        acc[hmm.local[s], c] += v
    for s in np.flatnonzero(np.isfinite(hmm.log_final)):
        acc = stats.trans.setdefault(hmm.owner[s], np.zeros((NUM_STATES, NUM_STATES + 1)))
        acc[hmm.local[s], EXIT] += final_occ[s]
    stats.total_log_likelihood += loglik
    stats.num_frames += len(X)
    stats.num_utterances += 1
    return stats, loglik


def _accumulate_shard(args):
    model, utterances, dictionary, fillers = args
    stats = TrainingStats.zeros(model)
    for uid, tokens, feats in utterances:
        try:
            hmm = compile_utterance_hmm(tokens, dictionary, fillers, model)
            forward_backward(hmm, model, feats, stats)
        except MiniAsrError as exc:
            log.debug("skipping %s: %s", uid, exc)
            stats.num_skipped += 1
    return stats


def accumulate_stats(model, utterances, dictionary, fillers, shards=1, jobs=1):
    """Sum statistics over ``[(uid, tokens, features)]``.

    Utterances are cut into ``shards`` contiguous blocks whose statistics
    are merged in block order; ``jobs > 1`` evaluates blocks in worker
    processes.  Results match serial accumulation up to reassociation.
    """
    utterances = list(utterances)
    shards = max(1, min(shards if jobs <= 1 else max(shards, jobs), len(utterances) or 1))
    bounds = np.linspace(0, len(utterances), shards + 1).round().astype(int)
    blocks = [(model, utterances[a:b], dictionary, fillers) for a, b in zip(bounds, bounds[1:])]
    if jobs > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_accumulate_shard, blocks))
    else:
        parts = [_accumulate_shard(b) for b in blocks]
    total = parts[0]
    for part in parts[1:]:
        total = total.merge(part)
    return total


def reestimate(model, stats):
    """M-step: new weights, means, floored variances and transitions."""
    new = model.copy()
    for p in np.flatnonzero(stats.occ.sum(axis=1) > 0):
        new.weights[p], new.means[p], new.variances[p] = _update_mixture(
            model.weights[p], model.means[p], model.variances[p], stats.occ[p],
            stats.sum_x[p], stats.sum_x2[p], model.variance_floor, model.weight_floor)
    for label, counts in stats.trans.items():
        hmm = new.phone_hmms.get(label)
        if hmm is None:
            continue
        rows = counts.sum(axis=1)
        for i in np.flatnonzero(rows > 0):
            hmm.transitions[i] = counts[i] / rows[i]
    return new


def training_utterances(manifest, features, split="train"):
    ts = getattr(manifest, split)
    return [(uid, toks, features[uid]) for uid, toks in ts.utterances if uid in features]


def baum_welch_iteration(model, manifest, features, jobs=1, shards=1):
    """One EM pass over the training split.

    Returns ``(new_model, total log-likelihood under the input model)``.
    Utterances that cannot be aligned are skipped with a warning.
    """
    utts = training_utterances(manifest, features)
    stats = accumulate_stats(model, utts, manifest.dictionary, manifest.fillers, shards=shards, jobs=jobs)
    if stats.num_skipped:
        log.warning("%d of %d utterances skipped", stats.num_skipped, len(utts))
    if stats.num_utterances == 0:
        raise NoTrainingData("every training utterance was skipped")
    return reestimate(model, stats), stats.total_log_likelihood


# ---------------------------------------------------------------------------
# Initialisation, splitting, context dependency


def uniform_segmentation(num_frames, num_states):
    """Frames per state, largest remainder first with earlier states winning ties."""
    base, extra = divmod(num_frames, num_states)
    return [base + (1 if i < extra else 0) for i in range(num_states)]


def model_phones(manifest):
    phones = list(manifest.phone_set)
    for ph in manifest.fillers.entries.values():
        if ph not in phones:
            phones.append(ph)
    return phones


def flat_start(manifest, features, variance_floor=DEFAULT_VARIANCE_FLOOR,
               weight_floor=DEFAULT_WEIGHT_FLOOR):
    """Single-Gaussian CI model from a uniform segmentation of each utterance."""
    utts = training_utterances(manifest, features)
    if not utts:
        raise NoTrainingData("no training utterances with features")
    phones = model_phones(manifest)
    D = _frames(utts[0][2]).shape[1]
    P = NUM_STATES * len(phones)
    hmms = {ph: PhoneHmm(ph, range(NUM_STATES * i, NUM_STATES * i + NUM_STATES)) for i, ph in enumerate(phones)}
    model = AcousticModel("CI", np.ones((P, 1)), np.zeros((P, 1, D)), np.ones((P, 1, D)), hmms,
                          variance_floor=variance_floor, weight_floor=weight_floor)
    count = np.zeros(P)
    s1 = np.zeros((P, D))
    s2 = np.zeros((P, D))
    for uid, tokens, feats in utts:
        X = _frames(feats)
        ids = [s for lab in linear_labels(tokens, manifest.dictionary, manifest.fillers, model)
               for s in model.resolve(lab).state_ids]
        start = 0
        for p, n in zip(ids, uniform_segmentation(len(X), len(ids))):
            seg = X[start : start + n]
            count[p] += n
            s1[p] += seg.sum(axis=0)
            s2[p] += (seg * seg).sum(axis=0)
            start += n
    allx = np.concatenate([_frames(f) for _, _, f in utts])
    g_mean = allx.mean(axis=0)
    g_var = np.maximum(allx.var(axis=0), variance_floor)
    for p in range(P):
        if count[p] > 0:
            mu = s1[p] / count[p]
            model.means[p, 0] = mu
            model.variances[p, 0] = np.maximum(s2[p] / count[p] - mu * mu, variance_floor)
        else:
            model.means[p, 0] = g_mean
            model.variances[p, 0] = g_var
    return model


def split_mixtures(model, target_components):
    """Double every state's mixture (1->2->4->8)."""
    M = model.num_mixtures
    if target_components != 2 * M or target_components > MAX_MIXTURES:
        raise BadSchedule(f"cannot split {M} components into {target_components}")
    sd = np.sqrt(model.variances)
    means = np.empty((model.num_states, 2 * M, model.feature_dim))
    means[:, 0::2] = model.means + 0.2 * sd
    means[:, 1::2] = model.means - 0.2 * sd
    new = model.copy()
    new.weights = np.repeat(model.weights / 2.0, 2, axis=1)
    new.means = means
    new.variances = np.repeat(model.variances, 2, axis=1)
    return new


def triphone_counts(manifest):
    counts = Counter()
    for _, tokens in manifest.train.utterances:
        for tok in tokens:
            if is_filler_token(tok) or tok not in manifest.dictionary:
                continue
            for pron in manifest.dictionary[tok]:
                counts.update(word_triphones(pron))
    return counts


def build_cd_model(ci_model, manifest, min_count=3):
    """Word-internal triphone model backed off to monophones.

    Triphones seen at least ``min_count`` times in the training
    transcripts get their own HMM cloned from the base phone; all others
    share the base phone's states through the tying map.  SIL and filler
    phones stay context independent.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = triphone_counts(manifest)
    requested = set(counts)
    for prons in manifest.dictionary.entries.values():
        for pron in prons:
            requested.update(word_triphones(pron))
    model = ci_model.copy()
    model.kind = "CD"
    new_w, new_mu, new_var = [model.weights], [model.means], [model.variances]
    next_id = model.num_states
    for tri in sorted(requested):
        base = model.phone_hmms[split_triphone(tri)[1]]
        if counts.get(tri, 0) >= min_count:
            ids = tuple(range(next_id, next_id + NUM_STATES))
            next_id += NUM_STATES
            src = list(base.state_ids)
            new_w.append(ci_model.weights[src])
            new_mu.append(ci_model.means[src])
            new_var.append(ci_model.variances[src])
            model.phone_hmms[tri] = PhoneHmm(tri, ids, base.transitions.copy())
        else:
            ids = base.state_ids
        for i, p in enumerate(ids):
            model.tying[(tri, i)] = p
    model.weights = np.concatenate(new_w)
    model.means = np.concatenate(new_mu)
    model.variances = np.concatenate(new_var)
    return model


# ---------------------------------------------------------------------------
# Storage

MODEL_MAGIC = b"MAM1"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIBIIIIdd")


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def write_model(model, path):
    """Binary model file, little-endian::

        header: "MAM1" u32 version, u8 kind (0 CI, 1 CD), u32 feature dim,
                u32 phone HMM count, u32 mixtures, u32 physical states,
                f64 variance floor, f64 weight floor
        per phone HMM: label, 3 x u32 state ids, 3x4 f64 transitions
        per physical state: weights, means, variances (f64)
        tying: u32 count, then (label, u8 state index, u32 physical id)

    Strings are u16-length-prefixed UTF-8.
    """
    parts = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, 0 if model.kind == "CI" else 1, model.feature_dim,
                          len(model.phone_hmms), model.num_mixtures, model.num_states,
                          model.variance_floor, model.weight_floor)]
    for label, hmm in model.phone_hmms.items():
        parts.append(_pack_str(label))
        parts.append(struct.pack("<3I", *hmm.state_ids))
        parts.append(np.ascontiguousarray(hmm.transitions, dtype="<f8").tobytes())
    for arr in (model.weights, model.means, model.variances):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(struct.pack("<I", len(model.tying)))
    for (label, i), p in sorted(model.tying.items()):
        parts.append(_pack_str(label) + struct.pack("<BI", i, p))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


def read_model(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CorruptModelFile(f"{path}: cannot read: {exc}") from exc
    if data[:4] != MODEL_MAGIC:
        raise CorruptModelFile(f"{path}: bad magic {data[:4]!r}")
    try:
        _, version, kind, D, n_hmm, M, P, vfloor, wfloor = _HEADER.unpack_from(data)
        if version != MODEL_VERSION:
            raise CorruptModelFile(f"{path}: unsupported version {version}")
        pos = _HEADER.size

        def read_str():
            nonlocal pos
            (n,) = struct.unpack_from("<H", data, pos)
            s = data[pos + 2 : pos + 2 + n]
            if len(s) != n:
                raise CorruptModelFile(f"{path}: truncated string")
            pos += 2 + n
            return s.decode("utf-8")

        def read_array(shape):
            nonlocal pos
            count = int(np.prod(shape))
            if pos + 8 * count > len(data):
                raise CorruptModelFile(f"{path}: truncated parameters")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
            return arr

        hmms = {}
        for _ in range(n_hmm):
            label = read_str()
            ids = struct.unpack_from("<3I", data, pos)
            pos += 12
            if max(ids) >= P:
                raise CorruptModelFile(f"{path}: {label} refers to state {max(ids)} of {P}")
            hmms[label] = PhoneHmm(label, ids, read_array((NUM_STATES, NUM_STATES + 1)))
        weights = read_array((P, M))
        means = read_array((P, M, D))
        variances = read_array((P, M, D))
        (n_tie,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tying = {}
        for _ in range(n_tie):
            label = read_str()
            i, p = struct.unpack_from("<BI", data, pos)
            pos += 5
            if p >= P:
                raise CorruptModelFile(f"{path}: tying entry {label}[{i}] out of range")
            tying[(label, i)] = p
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptModelFile(f"{path}: truncated or malformed: {exc}") from exc
    if pos != len(data):
        raise CorruptModelFile(f"{path}: {len(data) - pos} trailing bytes")
    if kind not in (0, 1):
        raise CorruptModelFile(f"{path}: unknown model kind {kind}")
    return AcousticModel("CI" if kind == 0 else "CD", weights, means, variances, hmms, tying, vfloor, wfloor)
