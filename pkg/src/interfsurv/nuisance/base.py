"""Common interfaces of the nuisance models.

Survival models are queried through :class:`ExposureQuery` rows.  Each row
describes one unit under a (possibly counterfactual) allocation through its
own treatment, the number of treated other units, its covariates, the mean
covariates of the other units and the cluster size.

Two kinds of survival model exist.  Grid models put all mass on a
:class:`~interfsurv.data.TimeGrid` and expose ``grid_survival``; continuous
models (the simulation oracle) expose ``survival_at`` and ``g_at`` at
arbitrary times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import TimeGrid
from ..estimands import RMST, RiskAt


@dataclass(frozen=True, eq=False)
class ExposureQuery:
    x: np.ndarray       # (R, p)
    xbar: np.ndarray    # (R, p)
    a: np.ndarray       # (R,)
    k: np.ndarray       # (R,) treated others
    n: np.ndarray       # (R,) cluster size

    def __len__(self) -> int:
        return self.a.shape[0]

    @property
    def abar(self) -> np.ndarray:
        """Treated share of the other units, k / (n - 1) (0 when alone)."""
        return np.where(self.n > 1, self.k / np.maximum(self.n - 1, 1), 0.0)

    def take(self, idx) -> "ExposureQuery":
        return ExposureQuery(self.x[idx], self.xbar[idx], self.a[idx], self.k[idx], self.n[idx])

    @classmethod
    def observed(cls, flat, idx=None) -> "ExposureQuery":
        """Rows of the observed allocation for units of a FlatUnits table."""
        if idx is None:
            idx = slice(None)
        return cls(flat.x[idx], flat.xbar[idx], flat.a[idx].astype(float),
                   flat.k[idx].astype(float), flat.n[idx].astype(float))

    @classmethod
    def all_exposures(cls, flat, idx=None) -> "ExposureQuery":
        """For each unit, 2 n rows: own treatment v in {0,1} x k = 0..n-1.

        Rows are ordered unit by unit, then v, then k.
        """
        if idx is None:
            idx = np.arange(flat.a.shape[0])
        idx = np.asarray(idx)
        n = flat.n[idx]
        reps = 2 * n
        unit = np.repeat(idx, reps)
        start = np.concatenate([[0], np.cumsum(reps)[:-1]])
        local = np.arange(unit.shape[0]) - np.repeat(start, reps)
        nn = np.repeat(n, reps)
        v = local // nn
        k = local % nn
        return cls(flat.x[unit], flat.xbar[unit], v.astype(float), k.astype(float),
                   nn.astype(float))


def curve_g(surv: np.ndarray, points: np.ndarray, transform) -> np.ndarray:
    """G(r_k) = E[R(T) 1(T >= r_k)] on the grid from post-jump survival (R, L).

    Mass beyond the last grid point is valued at ``transform.tail``.
    Returns an array of shape (R, L + 1); column L holds G beyond the grid
    (tail mass only) so that ``g[:, 0]`` is E[R(T)].
    """
    R, L = surv.shape
    prev = np.empty_like(surv)
    prev[:, 0] = 1.0
    prev[:, 1:] = surv[:, :-1]
    dF = prev - surv
    contrib = dF * transform(points)[None, :]
    g = np.empty((R, L + 1))
    g[:, L] = surv[:, -1] * transform.tail(points[-1])
    g[:, :L] = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1] + g[:, L:L + 1]
    return g


def mean_from_survival(surv: np.ndarray, points: np.ndarray, transform) -> np.ndarray:
    """E[R(T)] from post-jump grid survival."""
    if isinstance(transform, RiskAt):
        idx = np.searchsorted(points, transform.tau, side="right")
        return 1.0 - surv[:, idx - 1] if idx > 0 else np.zeros(surv.shape[0])
    return curve_g(surv, points, transform)[:, 0]


class SurvivalModel:
    """Conditional distribution of an event or censoring time."""

    target: str = "event"
    grid: TimeGrid | None = None

    @property
    def is_grid(self) -> bool:
        return self.grid is not None

    def survival_at(self, q: ExposureQuery, times) -> np.ndarray:
        """S(t) = P(time > t), shape (R, T) for ``times`` of shape (T,) or (R, T)."""
        raise NotImplementedError

    def risk_mean(self, q: ExposureQuery, transform) -> np.ndarray:
        """E[R(T) | exposure row] for each row."""
        raise NotImplementedError


class GridSurvivalModel(SurvivalModel):
    """Base class for models with discrete hazards on a time grid."""

    def grid_survival(self, q: ExposureQuery) -> np.ndarray:
        """Post-jump survival at every grid point, shape (R, L)."""
        raise NotImplementedError

    def grid_survival_upto(self, q: ExposureQuery, n_points: int) -> np.ndarray:
        return self.grid_survival(q)[:, :n_points]

    def survival_at(self, q, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        idx = self.grid.index_right(times)
        s = self.grid_survival(q)
        s = np.concatenate([np.ones((s.shape[0], 1)), s], axis=1)
        if times.ndim == 1:
            return s[:, idx]
        return np.take_along_axis(s, idx, axis=1)

    def risk_mean(self, q, transform, chunk: int = 4096) -> np.ndarray:
        pts = self.grid.points
        if isinstance(transform, RiskAt):
            upto = int(np.searchsorted(pts, transform.tau, side="right"))
            if upto == 0:
                return np.zeros(len(q))
        elif isinstance(transform, RMST):
            upto = int(np.searchsorted(pts, transform.h, side="right"))
            if upto == 0:
                return np.full(len(q), float(transform.h))
        else:
            upto = len(pts)
        out = np.empty(len(q))
        for s in range(0, len(q), chunk):
            rows = np.arange(s, min(len(q), s + chunk))
            surv = self.grid_survival_upto(q.take(rows), upto)
            out[rows] = _mean_upto(surv, pts[:upto], transform)
        return out


def _mean_upto(surv, pts, transform):
    if isinstance(transform, RiskAt):
        return 1.0 - surv[:, -1]
    if isinstance(transform, RMST):
        # E[min(T, h)] = integral of S over [0, h] for a step survival curve
        h = transform.h
        knots = np.concatenate([[0.0], np.minimum(pts, h)])
        widths = np.diff(knots)
        prev = np.concatenate([np.ones((surv.shape[0], 1)), surv[:, :-1]], axis=1)
        total = prev @ widths
        tail_w = max(h - (pts[-1] if pts.size else 0.0), 0.0)
        return total + surv[:, -1] * tail_w
    return curve_g(surv, pts, transform)[:, 0]


class HazardTableModel(GridSurvivalModel):
    """Grid model defined by explicit hazards, one row per distinct profile.

    ``profile`` maps an :class:`ExposureQuery` to integer row indices of the
    hazard table.  Used for hand-specified and brute-force models.
    """

    def __init__(self, grid: TimeGrid, hazards: np.ndarray, profile, target: str = "event"):
        self.grid = grid
        self.hazards = np.asarray(hazards, dtype=float)
        self.profile = profile
        self.target = target
        self._surv = np.cumprod(1.0 - self.hazards, axis=1)

    def grid_survival(self, q):
        return self._surv[np.asarray(self.profile(q), dtype=int)]

    def grid_hazards(self, q):
        return self.hazards[np.asarray(self.profile(q), dtype=int)]


class PropensityModel:
    """Fitted law of a cluster's treatment vector given covariates."""

    def allocation(self, x: np.ndarray):
        """AllocationModel of a cluster with covariate matrix ``x`` (n, p)."""
        raise NotImplementedError

    def marginal(self, x: np.ndarray) -> np.ndarray:
        return self.allocation(x).marginals
