"""Pooled discrete-time hazard logistic regression.

logit h_k(z) = s(log r_k)'gamma + z'beta + log(r_k) z'beta_t + log(r_k - r_{k-1})

with s a linear spline in log time with knots at quantiles of the event
times, and z the exposure-mapping features.  The log interval width offset
makes the fitted hazard scale with the grid spacing, so one model serves
dense grids of distinct observed times.  Non-event person-period rows are
subsampled and reweighted.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from ..data import Dataset, TimeGrid
from ..errors import NoEventsWarning
from .base import ExposureQuery, GridSurvivalModel
from .forest import survival_features, target_arrays


def _time_design(logt: np.ndarray, knots: np.ndarray) -> np.ndarray:
    cols = [np.ones_like(logt), logt] + [np.maximum(logt - k, 0.0) for k in knots]
    return np.column_stack(cols)


def _log_width(points: np.ndarray) -> np.ndarray:
    width = np.diff(np.concatenate([[0.0], points]))
    floor = 1e-8 * max(points[-1], 1.0)
    return np.log(np.maximum(width, floor))


def _log_time(points: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(points, 1e-8 * max(points[-1], 1.0)))


class PooledLogisticHazard(GridSurvivalModel):
    """Fitted pooled logistic hazard on a grid."""

    def __init__(self, grid, target, knots, gamma, beta, beta_t, center, scale, no_events=False):
        self.grid = grid
        self.target = target
        self.knots = knots
        self.gamma = gamma
        self.beta = beta
        self.beta_t = beta_t
        self.center = center
        self.scale = scale
        self.no_events = no_events
        pts = grid.points
        self._logt = _log_time(pts)
        self._base = _time_design(self._logt, knots) @ gamma + _log_width(pts) \
            if not no_events else None

    def grid_hazards(self, q: ExposureQuery, upto: int | None = None) -> np.ndarray:
        upto = len(self.grid) if upto is None else int(upto)
        if self.no_events:
            return np.zeros((len(q), upto))
        z = (survival_features(q) - self.center) / self.scale
        eta = self._base[None, :upto] + (z @ self.beta)[:, None] \
            + (z @ self.beta_t)[:, None] * self._logt[None, :upto]
        return expit(eta)

    def grid_survival_upto(self, q, n_points):
        return np.cumprod(1.0 - self.grid_hazards(q, n_points), axis=1)

    def grid_survival(self, q):
        return self.grid_survival_upto(q, len(self.grid))


def fit_pooled_logistic(train: Dataset, target: str, grid: TimeGrid, seed: int = 0,
                        n_knots: int = 4, penalty: float = 1e-4, time_interactions: bool = True,
                        controls_per_event: int = 50, maxiter: int = 1000) -> PooledLogisticHazard:
    """Fit the pooled hazard model for the event or censoring time.

    Non-event person-period rows are kept with a probability chosen to give
    about ``controls_per_event`` of them per event row and weighted by its
    inverse.
    """
    t, s, e = target_arrays(train, grid, target)
    pts = grid.points
    if s.sum() == 0:
        warnings.warn(f"no {target} events in the training data; hazard set to zero",
                      NoEventsWarning, stacklevel=2)
        return PooledLogisticHazard(grid, target, None, None, None, None, None, None, True)
    logt = _log_time(pts)
    knots = np.unique(np.quantile(logt[t[s == 1]], np.linspace(0, 1, n_knots + 2)[1:-1]))
    Z = survival_features(ExposureQuery.observed(train.flat))
    center = Z.mean(axis=0)
    scale = Z.std(axis=0)
    scale[scale < 1e-12] = np.inf
    Zs = (Z - center) / scale

    # person-period rows: unit u at risk at grid index k = 0..e_u
    counts = np.maximum(e + 1, 0)
    unit = np.repeat(np.arange(t.shape[0]), counts)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    k = np.arange(unit.shape[0]) - np.repeat(start, counts)
    y = ((k == t[unit]) & (s[unit] == 1)).astype(float)
    n_ev = y.sum()
    n_non = y.shape[0] - n_ev
    frac = min(1.0, controls_per_event * n_ev / max(n_non, 1.0))
    rng = np.random.default_rng([int(seed), 0x9001])
    keep = (y == 1) | (rng.random(y.shape[0]) < frac)
    unit, k, y = unit[keep], k[keep], y[keep]
    wt = np.where(y == 1, 1.0, 1.0 / frac)

    T = _time_design(logt[k], knots)
    blocks = [T, Zs[unit]]
    if time_interactions:
        blocks.append(Zs[unit] * logt[k][:, None])
    X = np.hstack(blocks)
    off = _log_width(pts)[k]
    F = Zs.shape[1]
    theta0 = np.zeros(X.shape[1])
    theta0[0] = np.log(n_ev / wt.sum()) - off.mean()

    def fun(theta):
        eta = X @ theta + off
        p = expit(eta)
        tot = wt.sum()
        val = (wt * (np.logaddexp(0.0, eta) - y * eta)).sum() / tot
        grad = X.T @ (wt * (p - y)) / tot
        pen = theta[T.shape[1]:]
        val += 0.5 * penalty * pen @ pen
        grad[T.shape[1]:] += penalty * pen
        return val, grad

    res = minimize(fun, theta0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
    th = res.x
    nt = T.shape[1]
    gamma = th[:nt]
    beta = th[nt:nt + F]
    beta_t = th[nt + F:] if time_interactions else np.zeros(F)
    return PooledLogisticHazard(grid, target, knots, gamma, beta, beta_t, center, scale)
