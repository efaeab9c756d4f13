"""Compact random survival forest on the time grid.

Each tree is grown with log-rank splitting over a random subset of features
and random cut points, on half of the units (honest trees) or on a bootstrap
sample.  Leaves hold Nelson-Aalen
discrete hazards d_k / n_k at their event times.  The forest hazard at r_k
is the average of the tree hazards and S(r_k) = prod_{l <= k} (1 - h_l).

Risk sets follow the tie rule of the estimator: a unit censored at r_k is
not at risk for the event at r_k, and a unit with an event at r_k is still
at risk for censoring at r_k.
"""

from __future__ import annotations

import math
import warnings

import numba
import numpy as np

from ..data import Dataset, TimeGrid
from ..errors import NoEventsWarning
from .base import ExposureQuery, GridSurvivalModel


def survival_features(q: ExposureQuery) -> np.ndarray:
    """Exposure-mapping features: own treatment, treated share of others, X, mean X of others, n."""
    return np.hstack([q.a[:, None], q.abar[:, None], q.x, q.xbar, q.n[:, None]]).astype(float)


def target_arrays(train: Dataset, grid: TimeGrid, target: str):
    """Grid index of Y, target event flag and last at-risk index per unit."""
    flat = train.flat
    t = grid.index_of(flat.y).astype(np.int64)
    if target == "event":
        s = flat.delta.astype(np.int64)
        e = np.where(s == 1, t, t - 1)
    else:
        s = 1 - flat.delta.astype(np.int64)
        e = t.copy()
    return t, s, e


@numba.njit(cache=True)
def _node_stats(work, lo, hi, t, s, e):
    """Distinct event indices in the node and per-sample positions."""
    m = hi - lo
    tmp = np.empty(m, dtype=np.int64)
    c = 0
    for i in range(lo, hi):
        r = work[i]
        if s[r] == 1:
            tmp[c] = t[r]
            c += 1
    ev = np.unique(tmp[:c])
    pos_e = np.empty(m, dtype=np.int64)
    pos_t = np.full(m, -1, dtype=np.int64)
    for i in range(lo, hi):
        r = work[i]
        pos_e[i - lo] = np.searchsorted(ev, e[r], side="right")
        if s[r] == 1:
            pos_t[i - lo] = np.searchsorted(ev, t[r])
    return ev, pos_e, pos_t


@numba.njit(cache=True)
def _risk_counts(mask, pos_e, pos_t, U):
    n = np.zeros(U + 1)
    d = np.zeros(U)
    for i in range(pos_e.shape[0]):
        if mask[i]:
            n[pos_e[i]] += 1.0
            if pos_t[i] >= 0:
                d[pos_t[i]] += 1.0
    # n[k] = number at risk at event k = count with pos_e > k
    out = np.zeros(U)
    acc = 0.0
    for k in range(U, 0, -1):
        acc += n[k]
        out[k - 1] = acc
    return out, d


@numba.njit(cache=True)
def _logrank(nL, dL, n, d):
    num = 0.0
    var = 0.0
    for k in range(n.shape[0]):
        if n[k] < 1.0 or d[k] == 0.0:
            continue
        frac = nL[k] / n[k]
        num += dL[k] - d[k] * frac
        if n[k] > 1.0:
            var += d[k] * frac * (1.0 - frac) * (n[k] - d[k]) / (n[k] - 1.0)
    if var <= 1e-12:
        return -1.0
    return num * num / var


@numba.njit(cache=True)
def _grow_tree(Z, t, s, e, boot, mtry, nsplit, min_leaf, seed):
    np.random.seed(seed)
    N = boot.shape[0]
    F = Z.shape[1]
    cap = 2 * (N // max(min_leaf, 1)) + 3
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    leaf = np.full(cap, -1, dtype=np.int64)
    lo_of = np.zeros(cap, dtype=np.int64)
    hi_of = np.zeros(cap, dtype=np.int64)
    work = boot.copy()
    stack = np.empty(cap, dtype=np.int64)
    stack[0] = 0
    sp = 1
    lo_of[0] = 0
    hi_of[0] = N
    n_nodes = 1
    n_leaves = 0
    feats = np.arange(F)
    while sp > 0:
        sp -= 1
        node = stack[sp]
        lo = lo_of[node]
        hi = hi_of[node]
        m = hi - lo
        ev, pos_e, pos_t = _node_stats(work, lo, hi, t, s, e)
        U = ev.shape[0]
        best = -1.0
        bf = -1
        bc = 0.0
        if U > 0 and m >= 2 * min_leaf:
            allm = np.ones(m, dtype=np.bool_)
            ntot, dtot = _risk_counts(allm, pos_e, pos_t, U)
            np.random.shuffle(feats)
            mask = np.empty(m, dtype=np.bool_)
            for fi in range(min(mtry, F)):
                f = feats[fi]
                for _ in range(nsplit):
                    c = Z[work[lo + np.random.randint(m)], f]
                    nl = 0
                    for i in range(m):
                        mask[i] = Z[work[lo + i], f] <= c
                        if mask[i]:
                            nl += 1
                    if nl < min_leaf or m - nl < min_leaf:
                        continue
                    nL, dL = _risk_counts(mask, pos_e, pos_t, U)
                    st = _logrank(nL, dL, ntot, dtot)
                    if st > best:
                        best = st
                        bf = f
                        bc = c
        if bf >= 0:
            # partition work[lo:hi] in place
            i = lo
            j = hi - 1
            while i <= j:
                if Z[work[i], bf] <= bc:
                    i += 1
                else:
                    tmpv = work[i]
                    work[i] = work[j]
                    work[j] = tmpv
                    j -= 1
            feat[node] = bf
            thr[node] = bc
            left[node] = n_nodes
            right[node] = n_nodes + 1
            lo_of[n_nodes] = lo
            hi_of[n_nodes] = i
            lo_of[n_nodes + 1] = i
            hi_of[n_nodes + 1] = hi
            stack[sp] = n_nodes
            stack[sp + 1] = n_nodes + 1
            sp += 2
            n_nodes += 2
        else:
            leaf[node] = n_leaves
            n_leaves += 1
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], leaf[:n_nodes], n_leaves


@numba.njit(cache=True)
def _leaf_hazards(Z, t, s, e, idx, feat, thr, left, right, leaf, n_leaves):
    """Nelson-Aalen hazards of the samples ``idx`` routed to each leaf (CSR layout)."""
    N = idx.shape[0]
    lf = np.empty(N, dtype=np.int64)
    for i in range(N):
        node = 0
        r = idx[i]
        while leaf[node] < 0:
            if Z[r, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        lf[i] = leaf[node]
    order = np.argsort(lf, kind="mergesort")
    work = idx[order]
    lf = lf[order]
    leaf_ptr = np.zeros(n_leaves + 1, dtype=np.int64)
    leaf_idx = np.empty(N, dtype=np.int64)
    leaf_h = np.empty(N)
    n_entries = 0
    lo = 0
    for L in range(n_leaves):
        hi = lo
        while hi < N and lf[hi] == L:
            hi += 1
        if hi > lo:
            ev, pos_e, pos_t = _node_stats(work, lo, hi, t, s, e)
            U = ev.shape[0]
            if U > 0:
                allm = np.ones(hi - lo, dtype=np.bool_)
                ntot, dtot = _risk_counts(allm, pos_e, pos_t, U)
                for k in range(U):
                    if dtot[k] > 0:
                        den = ntot[k] + 0.5 if dtot[k] >= ntot[k] else ntot[k]
                        leaf_idx[n_entries] = ev[k]
                        leaf_h[n_entries] = dtot[k] / den
                        n_entries += 1
        leaf_ptr[L + 1] = n_entries
        lo = hi
    return leaf_ptr, leaf_idx[:n_entries], leaf_h[:n_entries]


@numba.njit(cache=True)
def _predict_hazard(Zq, upto, roots, feat, thr, left, right, leaf, leaf_ptr, leaf_idx, leaf_h):
    R = Zq.shape[0]
    T = roots.shape[0]
    out = np.zeros((R, upto))
    for r in range(R):
        for tr in range(T):
            node = roots[tr]
            while leaf[node] < 0:
                if Zq[r, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            lf = leaf[node]
            for q in range(leaf_ptr[lf], leaf_ptr[lf + 1]):
                k = leaf_idx[q]
                if k < upto:
                    out[r, k] += leaf_h[q]
        for k in range(upto):
            out[r, k] /= T
    return out


class SurvivalForest(GridSurvivalModel):
    """Ensemble of log-rank trees stored as flat arrays."""

    def __init__(self, grid, target, arrays, n_trees, no_events=False):
        self.grid = grid
        self.target = target
        (self._roots, self._feat, self._thr, self._left, self._right, self._leaf,
         self._leaf_ptr, self._leaf_idx, self._leaf_h) = arrays
        self.n_trees = n_trees
        self.no_events = no_events

    def grid_hazards(self, q: ExposureQuery, upto: int | None = None) -> np.ndarray:
        upto = len(self.grid) if upto is None else int(upto)
        if self.no_events:
            return np.zeros((len(q), upto))
        return _predict_hazard(survival_features(q), upto, self._roots, self._feat, self._thr,
                               self._left, self._right, self._leaf, self._leaf_ptr,
                               self._leaf_idx, self._leaf_h)

    def grid_survival_upto(self, q, n_points):
        return np.cumprod(1.0 - self.grid_hazards(q, n_points), axis=1)

    def grid_survival(self, q):
        return self.grid_survival_upto(q, len(self.grid))


def fit_survival_forest(train: Dataset, target: str, grid: TimeGrid, seed: int = 0,
                        n_trees: int = 100, min_leaf: int = 15, mtry: int | None = None,
                        nsplit: int = 10, honest: bool = True) -> SurvivalForest:
    """Grow ``n_trees`` log-rank trees for the event or censoring time.

    With ``honest`` (the default) each tree is grown on a random half of the
    units and its leaf hazards are estimated on the other half, which removes
    the upward hazard bias of leaves fitted to their own events.  Otherwise
    trees are grown and estimated on one bootstrap sample.
    """
    t, s, e = target_arrays(train, grid, target)
    if s.sum() == 0:
        warnings.warn(f"no {target} events in the training data; hazard set to zero",
                      NoEventsWarning, stacklevel=2)
        return _empty_forest(grid, target, n_trees)
    Z = survival_features(ExposureQuery.observed(train.flat))
    F = Z.shape[1]
    mtry = max(1, math.ceil(F / 3)) if mtry is None else int(mtry)
    rng = np.random.default_rng([int(seed), 0xF0E5])
    seeds = rng.integers(0, 2 ** 31 - 1, size=n_trees)
    N = Z.shape[0]
    parts = []
    for b in range(n_trees):
        if honest:
            perm = rng.permutation(N).astype(np.int64)
            grow, est = perm[:N // 2], perm[N // 2:]
        else:
            grow = est = rng.integers(0, N, size=N).astype(np.int64)
        tree = _grow_tree(Z, t, s, e, grow, mtry, nsplit, min_leaf, int(seeds[b]))
        parts.append(tree[:5] + _leaf_hazards(Z, t, s, e, est, *tree))
    node_off = np.concatenate([[0], np.cumsum([p[0].shape[0] for p in parts])])
    leaf_off = np.concatenate([[0], np.cumsum([p[5].shape[0] - 1 for p in parts])])
    ent_off = np.concatenate([[0], np.cumsum([p[6].shape[0] for p in parts])])
    feat = np.concatenate([p[0] for p in parts])
    thr = np.concatenate([p[1] for p in parts])
    left = np.concatenate([np.where(p[2] >= 0, p[2] + node_off[b], -1) for b, p in enumerate(parts)])
    right = np.concatenate([np.where(p[3] >= 0, p[3] + node_off[b], -1) for b, p in enumerate(parts)])
    leaf = np.concatenate([np.where(p[4] >= 0, p[4] + leaf_off[b], -1) for b, p in enumerate(parts)])
    leaf_ptr = np.concatenate([[0]] + [p[5][1:] + ent_off[b] for b, p in enumerate(parts)])
    leaf_idx = np.concatenate([p[6] for p in parts])
    leaf_h = np.concatenate([p[7] for p in parts])
    arrays = (node_off[:-1].astype(np.int64), feat, thr, left, right, leaf,
              leaf_ptr.astype(np.int64), leaf_idx, leaf_h)
    return SurvivalForest(grid, target, arrays, n_trees)


def _empty_forest(grid, target, n_trees):
    return SurvivalForest(grid, target, (None,) * 9, n_trees, no_events=True)
