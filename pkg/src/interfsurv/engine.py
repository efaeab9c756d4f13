"""Estimating function, cross-fitting and the subsampled, bounded, split-robust estimator.

For one cluster and one estimand the estimating function is

    phi = sum_a {w(a) + Phi(A; a)}' G(0 | a)                       (outcome regression)
        + H(A)^-1 w(A)' [Delta R(Y) / S^C(Y) - G(0 | A)]             (censoring-weighted correction)
        + H(A)^-1 w(A)' [sum_k G(r_k | A) / {S^C(r_k) S^T(r_k-)} dM^C_k]  (augmentation)

where G(r | a) = E[R(T) 1(T >= r) | a, X, N] and M^C is the censoring
martingale.  On a time grid the augmentation is an exact finite sum; for the
continuous simulation oracle it is computed by quadrature on nodes graded
towards zero.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .data import ClusterObservation, Dataset, TimeGrid, assign_folds, build_time_grid
from .errors import ClusterTooLargeForExactSum, InferenceInputError, TooFewClusters
from .estimands import RiskAt
from .nuisance.base import ExposureQuery, curve_g
from .nuisance.bundle import LearnerConfig, NuisanceBundle, fit_bundle
from .policies import all_allocations, block_arrays

EXACT_MAX_N = 20
_CHUNK = 4096


@dataclass(frozen=True)
class Exact:
    """Sum the outcome regression over all 2^n allocations."""


@dataclass(frozen=True)
class Subsample:
    """Replace the allocation sum by r draws from the fitted allocation law."""

    r: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("subsample size r must be >= 1")


# ---------------------------------------------------------------------------
# unit-level survival pieces

def g_function(event, transform, r, q: ExposureQuery) -> np.ndarray:
    """G(r) = E[R(T) 1(T >= r)] for each query row."""
    r = np.asarray(r, dtype=float)
    if event.is_grid:
        pts = event.grid.points
        g = curve_g(event.grid_survival(q), pts, transform)
        idx = np.searchsorted(pts, r, side="left")
        idx = np.broadcast_to(idx, (len(q),))
        return g[np.arange(len(q)), idx]
    times = np.broadcast_to(r, (len(q),))[:, None]
    return event.g_at(q, times, transform)[:, 0]


@dataclass(frozen=True, eq=False)
class MartingaleIncrements:
    """dM_k = 1(Y = r_k, Delta = 0) - 1(Y >= r_k) h_k, with S^C(r_k) alongside."""

    dm: np.ndarray
    s_c: np.ndarray

    def weighted_sum(self) -> np.ndarray:
        return (self.dm / self.s_c).sum(axis=1)


def censoring_martingale(censor, y, delta, q: ExposureQuery, grid: TimeGrid | None = None,
                         s_floor: float = 0.0) -> MartingaleIncrements:
    grid = censor.grid if grid is None else grid
    s = np.maximum(censor.grid_survival(q), s_floor)
    prev = np.concatenate([np.ones((s.shape[0], 1)), s[:, :-1]], axis=1)
    h = 1.0 - s / prev
    idx = grid.index_of(y)
    k = np.arange(len(grid))[None, :]
    jump = (k == idx[:, None]) & (np.asarray(delta)[:, None] == 0)
    dm = jump.astype(float) - (k <= idx[:, None]) * h
    return MartingaleIncrements(dm, s)


def unit_residuals(event, censor, q: ExposureQuery, y, delta, transforms,
                   s_floor: float = 0.0, n_nodes: int = 240, chunk: int = 512) -> np.ndarray:
    """Per-unit IPCW-BC + AUG pieces, shape (R, n_transforms).

    Each entry is Delta R(Y)/S^C(Y) - G(0) + AUG for the observed exposure.
    """
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta, dtype=float)
    out = np.empty((len(q), len(transforms)))
    for s in range(0, len(q), chunk):
        rows = np.arange(s, min(len(q), s + chunk))
        sub = q.take(rows)
        if event.is_grid and censor.is_grid:
            out[rows] = _residuals_grid(event, censor, sub, y[rows], delta[rows], transforms, s_floor)
        elif not event.is_grid and not censor.is_grid:
            out[rows] = _residuals_continuous(event, censor, sub, y[rows], delta[rows],
                                              transforms, s_floor, n_nodes)
        else:
            raise TypeError("event and censoring models must both be grid or both continuous")
    return out


def _residuals_grid(event, censor, q, y, delta, transforms, s_floor):
    grid = event.grid
    pts = grid.points
    L = len(grid)
    idx = grid.index_of(y)
    rows = np.arange(len(q))
    st = event.grid_survival(q)
    sc = np.maximum(censor.grid_survival(q), s_floor)
    inv_c = 1.0 / sc
    inc = np.diff(np.concatenate([np.ones((len(q), 1)), inv_c], axis=1), axis=1)
    st_prev = np.maximum(np.concatenate([np.ones((len(q), 1)), st[:, :-1]], axis=1), s_floor)
    at_risk = np.arange(L)[None, :] <= idx[:, None]
    out = np.empty((len(q), len(transforms)))
    for t, tr in enumerate(transforms):
        g = curve_g(st, pts, tr)
        f = g[:, :L] / st_prev
        aug = (1.0 - delta) * f[rows, idx] * inv_c[rows, idx] - (at_risk * f * inc).sum(axis=1)
        ipcw = delta * tr(y) * inv_c[rows, idx]
        out[:, t] = ipcw - g[:, 0] + aug
    return out


def continuous_nodes(y, horizons, n_nodes: int = 240, decades: float = 30.0):
    """Per-unit quadrature nodes on [0, Y]: 0, log-spaced points, horizons, Y."""
    y = np.asarray(y, dtype=float)
    u = np.linspace(0.0, 1.0, n_nodes)
    base = y[:, None] * 10.0 ** (-decades * (1.0 - u))[None, :]
    extra = [np.minimum(h, y)[:, None] for h in horizons]
    nodes = np.concatenate([np.zeros((y.shape[0], 1)), base] + extra, axis=1)
    return np.sort(nodes, axis=1)


def _residuals_continuous(event, censor, q, y, delta, transforms, s_floor, n_nodes):
    horizons = [tr.tau if isinstance(tr, RiskAt) else getattr(tr, "h", None) for tr in transforms]
    nodes = continuous_nodes(y, [h for h in horizons if h is not None], n_nodes)
    inv_c = 1.0 / np.maximum(censor.survival_at(q, nodes), s_floor)
    st = np.maximum(event.survival_at(q, nodes), s_floor)
    d_inv = np.diff(inv_c, axis=1)
    out = np.empty((len(q), len(transforms)))
    for t, tr in enumerate(transforms):
        g = event.g_at(q, nodes, tr)
        f = g / st
        aug = (1.0 - delta) * f[:, -1] * inv_c[:, -1] \
            - (0.5 * (f[:, 1:] + f[:, :-1]) * d_inv).sum(axis=1)
        ipcw = delta * tr(y) * inv_c[:, -1]
        out[:, t] = ipcw - g[:, 0] + aug
    return out


# ---------------------------------------------------------------------------
# evaluation plan

class Plan:
    """Decomposition of estimands into shared (block, policy) and transform pieces."""

    def __init__(self, specs):
        self.specs = list(specs)
        if not self.specs:
            raise ValueError("at least one estimand is required")
        self.transforms: list = []
        self.policies: list = []
        self.blocks: list[tuple[str, int]] = []
        self.terms: list[list[tuple[float, int, int]]] = []
        for spec in self.specs:
            if spec.transform not in self.transforms:
                self.transforms.append(spec.transform)
            t = self.transforms.index(spec.transform)
            terms = []
            for coef, block, pol in spec.components():
                if pol not in self.policies:
                    self.policies.append(pol)
                key = (block, self.policies.index(pol))
                if key not in self.blocks:
                    self.blocks.append(key)
                terms.append((coef, self.blocks.index(key), t))
            self.terms.append(terms)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.specs]


def _cluster_key(cluster_id: str) -> int:
    return zlib.crc32(cluster_id.encode())


def allocation_draws(mode, ctx, cluster: ClusterObservation, split: int = 0, fold: int = 0):
    """Allocations and outcome-regression weights for one cluster."""
    if isinstance(mode, Exact):
        if cluster.n > EXACT_MAX_N:
            raise ClusterTooLargeForExactSum(
                f"cluster {cluster.cluster_id!r} has n={cluster.n} > {EXACT_MAX_N}")
        allocs = all_allocations(cluster.n)
        return allocs, np.ones(allocs.shape[0])
    rng = np.random.default_rng([int(mode.seed), int(split), int(fold),
                                 _cluster_key(cluster.cluster_id)])
    allocs = ctx.model.sample(rng, mode.r)
    return allocs, 1.0 / (mode.r * ctx.h(allocs))


def evaluate_cluster(cluster, ctx, gtab, resid, plan: Plan, allocs, or_weights,
                     smooth: bool = False):
    """Outcome-regression values, weighted residual sums and IPW weights per block.

    gtab: (T, n, 2, n) with G(0) by transform, unit, own treatment and number
    of treated others; resid: (n, T) unit residuals at the observed exposure.
    With ``smooth`` the CIF terms concentrated on a = A are left out of the
    allocation sum and added back exactly.  Returns arrays of shape (B, T),
    (B, T), (B,).
    """
    n = cluster.n
    a_obs = cluster.a
    B, T = len(plan.blocks), len(plan.transforms)
    or_val = np.zeros((B, T))
    ipw_val = np.zeros((B, T))
    ipw_w = np.zeros(B)
    h_obs = ctx.h(a_obs[None, :])[0]
    units = np.arange(n)[None, :]
    for start in range(0, allocs.shape[0], _CHUNK):
        al = allocs[start:start + _CHUNK]
        wts = or_weights[start:start + _CHUNK]
        kk = al.sum(axis=1)[:, None] - al
        g0 = gtab[:, units, al, kk]                               # (T, M, n)
        for pi, pol in enumerate(plan.policies):
            terms = pol.terms(al, a_obs, ctx, smooth)
            for b, (block, bp) in enumerate(plan.blocks):
                if bp != pi:
                    continue
                w, phi = block_arrays(block, al, terms, n)
                or_val[b] += np.einsum("mj,tmj->t", (w + phi) * wts[:, None], g0)
    k_obs = a_obs.sum() - a_obs
    for pi, pol in enumerate(plan.policies):
        kappa = pol.point_mass(a_obs, ctx) if smooth else 0.0
        if kappa:
            for b, (block, bp) in enumerate(plan.blocks):
                if bp == pi:
                    own = a_obs if block == "mu" else np.full(n, 1 if block == "mu1" else 0)
                    or_val[b] += kappa / n * gtab[:, np.arange(n), own, k_obs].sum(axis=1)
        t_obs = pol.terms(a_obs[None, :], a_obs, ctx)
        for b, (block, bp) in enumerate(plan.blocks):
            if bp != pi:
                continue
            w_obs = block_arrays(block, a_obs[None, :], t_obs, n)[0][0]
            ipw_w[b] = w_obs.sum() / h_obs
            ipw_val[b] = w_obs @ resid / h_obs
    return or_val, ipw_val, ipw_w


def evaluate_fold(eval_ds: Dataset, bundle: NuisanceBundle, plan: Plan, mode,
                  split: int = 0, fold: int = 0):
    """Block-level pieces for every cluster of ``eval_ds``."""
    for c in eval_ds.clusters:
        bundle.check(c)
    flat = eval_ds.flat
    q_obs = ExposureQuery.observed(flat)
    resid = unit_residuals(bundle.event, bundle.censor, q_obs, flat.y, flat.delta,
                           plan.transforms, bundle.floors.s)
    q_all = ExposureQuery.all_exposures(flat)
    g0 = np.stack([bundle.event.risk_mean(q_all, tr) for tr in plan.transforms])
    m = eval_ds.m
    B, T = len(plan.blocks), len(plan.transforms)
    or_part = np.zeros((m, B, T))
    ipw_part = np.zeros((m, B, T))
    ipw_weight = np.zeros((m, B))
    row = 0
    for i, c in enumerate(eval_ds.clusters):
        n = c.n
        s = flat.offsets[i]
        gtab = g0[:, row:row + 2 * n * n].reshape(T, n, 2, n)
        row += 2 * n * n
        ctx = bundle.context(c)
        allocs, wts = allocation_draws(mode, ctx, c, split, fold)
        or_part[i], ipw_part[i], ipw_weight[i] = evaluate_cluster(
            c, ctx, gtab, resid[s:s + n], plan, allocs, wts, isinstance(mode, Subsample))
    return or_part, ipw_part, ipw_weight


def cluster_influence(obs: ClusterObservation, bundle: NuisanceBundle, spec, mode=Exact(),
                      split: int = 0) -> float:
    """Estimating-function value of one cluster for one estimand (no bounding)."""
    plan = Plan([spec])
    ds = Dataset((obs,), obs.p)
    or_part, ipw_part, _ = evaluate_fold(ds, bundle, plan, mode, split, bundle.fold)
    return float(sum(coef * (or_part[0, b, t] + ipw_part[0, b, t])
                     for coef, b, t in plan.terms[0]))


# ---------------------------------------------------------------------------
# influence tables and estimates

@dataclass(eq=False)
class InfluenceTable:
    """Per-cluster estimating-function values for a list of estimands.

    ``phi`` has one column per estimand.  With ``bounded`` the correction
    terms of every block are divided by the fold mean of that block's inverse
    probability weights.  Point estimates average fold means, so with equal
    fold sizes they are the column means of ``phi``.
    """

    plan: Plan
    folds: np.ndarray
    cluster_ids: tuple
    or_part: np.ndarray
    ipw_part: np.ndarray
    ipw_weight: np.ndarray
    bounded: bool = False
    phi: np.ndarray = field(init=False)
    normalizers: np.ndarray = field(init=False)

    def __post_init__(self):
        K = int(self.folds.max())
        B = len(self.plan.blocks)
        norm = np.ones((K, B))
        if self.bounded:
            for k in range(K):
                v = self.ipw_weight[self.folds == k + 1].mean(axis=0)
                norm[k] = np.where(v > 0, v, 1.0)
        self.normalizers = norm
        v = norm[self.folds - 1]                                   # (m, B)
        cols = []
        for terms in self.plan.terms:
            col = np.zeros(self.folds.shape[0])
            for coef, b, t in terms:
                col += coef * (self.or_part[:, b, t] + self.ipw_part[:, b, t] / v[:, b])
            cols.append(col)
        self.phi = np.column_stack(cols)
        if not np.all(np.isfinite(self.phi)):
            raise InferenceInputError("non-finite estimating-function values")

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def n_folds(self) -> int:
        return int(self.folds.max())

    def fold_means(self, values: np.ndarray) -> np.ndarray:
        return np.stack([values[self.folds == k + 1].mean(axis=0) for k in range(self.n_folds)])

    def point(self) -> np.ndarray:
        return self.fold_means(self.phi).mean(axis=0)

    def variance(self, point: np.ndarray | None = None) -> np.ndarray:
        """Fold-averaged mean squared deviation from the global estimate."""
        point = self.point() if point is None else point
        return self.fold_means((self.phi - point) ** 2).mean(axis=0)

    def se(self) -> np.ndarray:
        return np.sqrt(self.variance() / self.m)


@dataclass(frozen=True)
class EstimateResult:
    label: str
    spec: object
    point: float
    se: float
    ci: tuple
    m: int
    K: int
    S: int = 1
    r: int | None = None
    bounded: bool = False
    level: float = 0.95
    variance: float = float("nan")


def results_from(table: InfluenceTable, point=None, variance=None, level: float = 0.95,
                 S: int = 1, r: int | None = None) -> list[EstimateResult]:
    from .inference import normal_quantile
    point = table.point() if point is None else np.asarray(point)
    variance = table.variance(point) if variance is None else np.asarray(variance)
    se = np.sqrt(np.maximum(variance, 0.0) / table.m)
    z = normal_quantile(level)
    out = []
    for e, spec in enumerate(table.plan.specs):
        out.append(EstimateResult(spec.label, spec, float(point[e]), float(se[e]),
                                  (float(point[e] - z * se[e]), float(point[e] + z * se[e])),
                                  table.m, table.n_folds, S, r, table.bounded, level,
                                  float(variance[e])))
    return out


def _fold_seed(seed: int, split: int, fold: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(split), int(fold)]).generate_state(1)[0])


def cross_fit(ds: Dataset, specs, K: int = 2, learners: LearnerConfig | None = None,
              mode=None, bounded: bool = False, seed: int = 0, split: int = 0,
              grid: TimeGrid | None = None, level: float = 0.95, log=None):
    """Cross-fitted estimating-function table and estimates.

    Nuisance models for fold k are trained on the other folds and evaluated
    on fold k.  Returns ``(InfluenceTable, list[EstimateResult])``.
    """
    if K < 2:
        raise TooFewClusters("cross-fitting needs K >= 2")
    if ds.m < K:
        raise TooFewClusters(f"{ds.m} clusters cannot fill {K} folds")
    learners = LearnerConfig() if learners is None else learners
    mode = Subsample(100, seed) if mode is None else mode
    plan = Plan(specs)
    ds = assign_folds(ds, K, seed, split)
    grid = build_time_grid(ds) if grid is None else grid
    m, B, T = ds.m, len(plan.blocks), len(plan.transforms)
    or_part = np.zeros((m, B, T))
    ipw_part = np.zeros((m, B, T))
    ipw_weight = np.zeros((m, B))
    for k in range(1, K + 1):
        ev = np.flatnonzero(ds.folds == k)
        tr = np.flatnonzero(ds.folds != k)
        bundle = fit_bundle(ds.subset(tr), grid, learners, fold=k, seed=_fold_seed(seed, split, k))
        if log is not None:
            log(f"split {split} fold {k}: train {tr.size} clusters, evaluate {ev.size}")
        o, i, w = evaluate_fold(ds.subset(ev), bundle, plan, mode, split, k)
        or_part[ev], ipw_part[ev], ipw_weight[ev] = o, i, w
    table = InfluenceTable(plan, ds.folds, tuple(c.cluster_id for c in ds.clusters),
                           or_part, ipw_part, ipw_weight, bounded)
    r = mode.r if isinstance(mode, Subsample) else None
    return table, results_from(table, level=level, r=r)


def split_median(values: np.ndarray) -> np.ndarray:
    """Median over axis 0; averages the two central values for an even count."""
    return np.median(np.asarray(values), axis=0)


def sbs_estimate(ds: Dataset, specs, K: int = 2, S: int = 1, r: int = 100,
                 learners: LearnerConfig | None = None, seed: int = 0,
                 level: float = 0.95, grid: TimeGrid | None = None, log=None,
                 return_tables: bool = False):
    """Subsampled, bounded cross-fitting repeated over S fold splits.

    The final estimate and variance are the medians over splits.
    """
    if S < 1 or r < 1:
        raise ValueError("S and r must be >= 1")
    tables = []
    for s in range(S):
        table, _ = cross_fit(ds, specs, K, learners, Subsample(r, seed), True, seed, s,
                             grid, level, log)
        tables.append(table)
    points = np.stack([t.point() for t in tables])
    variances = np.stack([t.variance(p) for t, p in zip(tables, points)])
    results = results_from(tables[0], split_median(points), split_median(variances),
                           level, S, r)
    if return_tables:
        return results, tables
    return results
