"""Nuisance models that evaluate the true functions of the simulation design."""

from __future__ import annotations

import numpy as np

from ..estimands import RMST, RiskAt
from ..errors import UnsupportedTransform
from ..policies import AllocationModel
from ..simulator import (DgpConfig, censor_shape, coexposure, event_shape,
                         expected_outcome, mixture_probs)
from ..special import gammainc
from .base import ExposureQuery, PropensityModel, SurvivalModel


class OraclePropensity(PropensityModel):
    """True treatment law: probit units sharing a normal cluster intercept."""

    def __init__(self, cfg: DgpConfig, n_nodes: int = 20):
        self.cfg = cfg
        self.n_nodes = n_nodes

    def allocation(self, x):
        p, w = mixture_probs(self.cfg, np.asarray(x, dtype=float), self.n_nodes)
        return AllocationModel(p, w)


class OracleGamma(SurvivalModel):
    """True gamma event or censoring time distribution (continuous)."""

    def __init__(self, cfg: DgpConfig, target: str = "event"):
        if target not in ("event", "censoring"):
            raise ValueError("target must be 'event' or 'censoring'")
        self.cfg = cfg
        self.target = target
        self.grid = None

    def shape(self, q: ExposureQuery) -> np.ndarray:
        abar = coexposure(self.cfg, q.k, q.n)
        f = event_shape if self.target == "event" else censor_shape
        return np.maximum(f(self.cfg, q.x, q.a, abar), 1e-12)

    def cdf(self, q, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        shape = self.shape(q)[:, None]
        t = times[None, :] if times.ndim == 1 else times
        return gammainc(shape, np.maximum(t, 0.0) / self.cfg.scale)

    def survival_at(self, q, times):
        return 1.0 - self.cdf(q, times)

    def risk_mean(self, q, transform):
        return expected_outcome(transform, self.shape(q), self.cfg.scale)

    def g_at(self, q, times, transform) -> np.ndarray:
        """E[R(T) 1(T >= t)] at per-row times (R, T)."""
        times = np.asarray(times, dtype=float)
        a = self.shape(q)[:, None]
        s = self.cfg.scale
        ft = gammainc(a, times / s)
        if isinstance(transform, RiskAt):
            return np.maximum(gammainc(a, transform.tau / s) - ft, 0.0)
        if isinstance(transform, RMST):
            h = transform.h
            below = a * s * np.maximum(gammainc(a + 1.0, h / s) - gammainc(a + 1.0, times / s), 0.0)
            return np.where(times < h, below + h * (1.0 - gammainc(a, h / s)), h * (1.0 - ft))
        raise UnsupportedTransform("oracle model supports RiskAt and RMST")
