"""Log-domain forward, backward and Viterbi recursions.

All routines take an HMM as ``(log_start, log_trans, log_final)`` over S
emitting states and a (T, S) matrix of emission log-likelihoods.  The
transition matrix is dense but only its finite entries are visited, via
padded predecessor/successor lists, so sparse left-to-right graphs stay
cheap.
"""

import numpy as np

from .errors import UtteranceTooShort

NEG_INF = -np.inf


def _padded_neighbours(log_trans, axis):
    """Indices and log-probs of finite entries per row (axis=1) or column (axis=0)."""
    finite = np.isfinite(log_trans)
    if axis == 0:
        finite = finite.T
        lt = log_trans.T
    else:
        lt = log_trans
    S = lt.shape[0]
    width = max(int(finite.sum(axis=1).max()) if S else 0, 1)
    idx = np.zeros((S, width), dtype=np.intp)
    lp = np.full((S, width), NEG_INF)
    for s in range(S):
        cols = np.flatnonzero(finite[s])
        idx[s, : len(cols)] = cols
        lp[s, : len(cols)] = lt[s, cols]
    return idx, lp


def _logsumexp_rows(x):
    m = x.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(x - safe[:, None]).sum(axis=1)) + safe


def logsumexp(x, axis=None):
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())[()]


class Trellis:
    """Pre-computed neighbour lists of one HMM, reusable across utterances."""

    def __init__(self, log_start, log_trans, log_final):
        self.log_start = np.asarray(log_start, dtype=np.float64)
        self.log_trans = np.asarray(log_trans, dtype=np.float64)
        self.log_final = np.asarray(log_final, dtype=np.float64)
        self.num_states = len(self.log_start)
        self.pred_idx, self.pred_lp = _padded_neighbours(self.log_trans, axis=0)
        self.succ_idx, self.succ_lp = _padded_neighbours(self.log_trans, axis=1)

    def forward(self, log_b):
        """Return ``(log P(O), log_alpha)``; raises if no path survives."""
        T, S = log_b.shape
        la = np.empty((T, S))
        la[0] = self.log_start + log_b[0]
        for t in range(1, T):
            la[t] = _logsumexp_rows(la[t - 1][self.pred_idx] + self.pred_lp) + log_b[t]
        total = logsumexp(la[-1] + self.log_final)
        if not np.isfinite(total):
            raise UtteranceTooShort(f"no state path of length {T} reaches the final state")
        return float(total), la

    def backward(self, log_b):
        T, S = log_b.shape
        lb = np.empty((T, S))
        lb[-1] = self.log_final
        for t in range(T - 2, -1, -1):
            nxt = log_b[t + 1] + lb[t + 1]
            lb[t] = _logsumexp_rows(nxt[self.succ_idx] + self.succ_lp)
        return lb

    def viterbi(self, log_b):
        """Return ``(best log score, state path)``; ties keep the lower index."""
        T, S = log_b.shape
        delta = self.log_start + log_b[0]
        back = np.zeros((T, S), dtype=np.intp)
        rows = np.arange(S)
        for t in range(1, T):
            cand = delta[self.pred_idx] + self.pred_lp
            k = np.argmax(cand, axis=1)
            back[t] = self.pred_idx[rows, k]
            delta = cand[rows, k] + log_b[t]
        end = delta + self.log_final
        last = int(np.argmax(end))
        score = float(end[last])
        if not np.isfinite(score):
            raise UtteranceTooShort(f"no state path of length {T} reaches the final state")
        path = np.empty(T, dtype=np.intp)
        path[-1] = last
        for t in range(T - 1, 0, -1):
            path[t - 1] = back[t, path[t]]
        return score, path

    def posteriors(self, log_b):
        """State occupancies, per-arc expected transition counts and exit counts.

        Returns ``(loglik, gamma (T, S), arcs (src, dst), xi_sums, final_occ)``.
        """
        loglik, la = self.forward(log_b)
        lb = self.backward(log_b)
        with np.errstate(under="ignore"):
            gamma = np.exp(la + lb - loglik)
            src, dst = np.nonzero(np.isfinite(self.log_trans))
            if len(log_b) > 1:
                lx = (la[:-1, src] + self.log_trans[src, dst]
                      + log_b[1:, dst] + lb[1:, dst] - loglik)
                xi = np.exp(lx).sum(axis=0)
            else:
                xi = np.zeros(len(src))
            final_occ = np.exp(la[-1] + self.log_final - loglik)
        return loglik, gamma, (src, dst), xi, final_occ


def forward(log_start, log_trans, log_final, log_b):
    return Trellis(log_start, log_trans, log_final).forward(np.asarray(log_b, dtype=np.float64))


def viterbi(log_start, log_trans, log_final, log_b):
    return Trellis(log_start, log_trans, log_final).viterbi(np.asarray(log_b, dtype=np.float64))
