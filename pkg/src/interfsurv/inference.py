"""Pointwise intervals, multiplier-bootstrap uniform bands and the interference test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import InferenceInputError, ZeroVariance


def normal_quantile(level: float) -> float:
    """z such that a two-sided normal interval has coverage ``level``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2.0))


def pointwise_ci(result, level: float = 0.95) -> tuple[float, float]:
    """point -/+ z se."""
    z = normal_quantile(level)
    return (result.point - z * result.se, result.point + z * result.se)


@dataclass(frozen=True)
class UCBResult:
    labels: tuple
    point: np.ndarray
    sigma: np.ndarray
    m: int
    critical: float
    level: float
    B: int

    @property
    def half_width(self) -> np.ndarray:
        return self.critical * self.sigma / math.sqrt(self.m)

    @property
    def lo(self) -> np.ndarray:
        return self.point - self.half_width

    @property
    def hi(self) -> np.ndarray:
        return self.point + self.half_width

    def covers(self, truth) -> bool:
        truth = np.asarray(truth, dtype=float)
        return bool(np.all((self.lo <= truth) & (truth <= self.hi)))


def bootstrap_suprema(table, columns, point, sigma, B: int, seed: int,
                      chunk: int = 1000) -> np.ndarray:
    """Sup over the grid of the standardized Rademacher multiplier process."""
    phi = table.phi[:, columns]
    m = phi.shape[0]
    folds = table.folds
    sizes = np.bincount(folds)[folds]
    c = 1.0 / (table.n_folds * sizes)                   # K^-1 m_k^-1 per cluster
    dev = (phi - point) * c[:, None] / (sigma / math.sqrt(m))
    rng = np.random.default_rng([int(seed), 0xB007])
    out = np.empty(B)
    for s in range(0, B, chunk):
        b = min(chunk, B - s)
        xi = rng.integers(0, 2, size=(b, m), dtype=np.int8) * 2 - 1
        out[s:s + b] = np.abs(xi @ dev).max(axis=1)
    return out


def ucb_critical_value(table, columns=None, point=None, sigma=None, B: int = 2000,
                       level: float = 0.95, seed: int = 0) -> UCBResult:
    """Uniform band over the estimands in ``columns`` of an influence table.

    ``point`` and ``sigma`` default to the table's own estimates; sigma is the
    square root of the estimated variance (not divided by sqrt(m)).
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    if columns is None:
        columns = list(range(table.phi.shape[1]))
    columns = list(columns)
    if not columns or table.m == 0:
        raise InferenceInputError("no grid points or clusters")
    if point is None:
        point = table.point()[columns]
    if sigma is None:
        sigma = np.sqrt(table.variance(table.point())[columns])
    point = np.asarray(point, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise ZeroVariance("every grid point needs a positive standard deviation")
    sups = np.sort(bootstrap_suprema(table, columns, point, sigma, B, seed))
    crit = float(sups[math.ceil(level * B) - 1])
    labels = tuple(table.plan.labels[c] for c in columns)
    return UCBResult(labels, point, sigma, table.m, crit, level, B)


def interference_test(ucb: UCBResult) -> str:
    """'reject' when no horizontal line fits inside the band at every grid point."""
    if len(ucb.point) < 2:
        raise InferenceInputError("the test needs at least two grid points")
    return "reject" if ucb.lo.max() > ucb.hi.min() else "fail_to_reject"
