"""Ridge-penalized logistic treatment model with a normal cluster intercept.

P(A = a | X, N) = int prod_j expit(z_j'beta + s u)^a_j {1 - expit(z_j'beta + s u)}^(1 - a_j) dPhi(u)

The integral is a Gauss-Hermite sum, so the fitted law is an
:class:`~interfsurv.policies.AllocationModel` mixture.  Unit features z_j are
built from the unit covariates and the mean covariates of the other units.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

from ..data import Dataset, others_mean
from ..errors import SeparationDetected, SeparationWarning
from ..policies import PI_FLOOR, AllocationModel
from .base import PropensityModel


def propensity_features(x: np.ndarray, xbar: np.ndarray, n: np.ndarray) -> np.ndarray:
    """x, x^2, max(x, 0), others' mean covariates and cluster size."""
    n = np.asarray(n, dtype=float).reshape(-1, 1)
    return np.hstack([x, x ** 2, np.maximum(x, 0.0), xbar, n])


class LogisticPropensity(PropensityModel):
    """Fitted random-intercept logistic model (``sigma = 0`` gives independent units)."""

    def __init__(self, coef, intercept, sigma, center, scale, n_nodes=15, clip=PI_FLOOR):
        self.coef = np.asarray(coef, dtype=float)
        self.intercept = float(intercept)
        self.sigma = abs(float(sigma))
        self.center = center
        self.scale = scale
        self.n_nodes = n_nodes
        self.clip = clip
        z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
        self._u, self._w = (z, w / w.sum()) if self.sigma > 0 else (np.zeros(1), np.ones(1))

    def linear(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        f = propensity_features(x, others_mean(x), np.full(x.shape[0], x.shape[0]))
        return self.intercept + ((f - self.center) / self.scale) @ self.coef

    def allocation(self, x):
        eta = self.linear(x)
        p = expit(eta[:, None] + self.sigma * self._u[None, :])
        return AllocationModel(np.clip(p, self.clip, 1.0 - self.clip), self._w)


class ConstantPropensity(PropensityModel):
    """Independent units with a common treatment probability."""

    def __init__(self, rate: float, clip=PI_FLOOR):
        self.rate = float(np.clip(rate, clip, 1.0 - clip))

    def allocation(self, x):
        return AllocationModel.product(np.full(np.asarray(x).shape[0], self.rate))


def _negloglik(theta, Z, a, offsets, u, logw, lam):
    F = Z.shape[1]
    beta, b0, s = theta[:F], theta[F], theta[F + 1]
    eta = b0 + Z @ beta
    lin = eta[:, None] + s * u[None, :]                        # (U, G)
    p = expit(lin)
    ll_unit = a[:, None] * lin - np.logaddexp(0.0, lin)         # log f_jg(a_j)
    lf = np.add.reduceat(ll_unit, offsets[:-1], axis=0)        # (m, G)
    tot = logsumexp(lf + logw[None, :], axis=1)
    post = np.exp(lf + logw[None, :] - tot[:, None])           # (m, G)
    cl = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
    resid = (a[:, None] - p) * post[cl]                          # (U, G)
    d_eta = resid.sum(axis=1)
    U = a.shape[0]
    val = -tot.sum() / U + 0.5 * lam * beta @ beta
    grad = np.empty_like(theta)
    grad[:F] = -(Z.T @ d_eta) / U + lam * beta
    grad[F] = -d_eta.sum() / U
    grad[F + 1] = -(resid * u[None, :]).sum() / U
    return val, grad


def fit_logistic_propensity(train: Dataset, seed: int = 0, penalty: float = 0.1,
                            random_intercept: bool = True, n_nodes: int = 15,
                            clip: float = PI_FLOOR, maxiter: int = 500,
                            fallback: bool = True) -> PropensityModel:
    """Maximize the ridge-penalized marginal likelihood over (beta, intercept, sigma).

    All-treated or all-untreated training data fall back to the clipped
    empirical rate with a :class:`SeparationWarning` (or raise
    :class:`SeparationDetected` when ``fallback`` is off); a single training
    cluster gives an intercept-only model.
    """
    flat = train.flat
    a = flat.a.astype(float)
    rate = a.mean()
    if rate in (0.0, 1.0):
        msg = f"training treatments are all {int(rate)}"
        if not fallback:
            raise SeparationDetected(msg)
        warnings.warn(msg, SeparationWarning, stacklevel=2)
        return ConstantPropensity(rate, clip)
    if train.m < 2:
        return ConstantPropensity(rate, clip)
    Z = propensity_features(flat.x, flat.xbar, flat.n)
    center = Z.mean(axis=0)
    scale = Z.std(axis=0)
    scale[scale < 1e-12] = np.inf                               # constant columns drop out
    Zs = (Z - center) / scale
    if random_intercept:
        u, w = np.polynomial.hermite_e.hermegauss(n_nodes)
        w = w / w.sum()
    else:
        u, w = np.zeros(1), np.ones(1)
    F = Zs.shape[1]
    theta0 = np.zeros(F + 2)
    theta0[F] = np.log(rate / (1.0 - rate))
    theta0[F + 1] = 0.5 if random_intercept else 0.0
    res = minimize(_negloglik, theta0, args=(Zs, a, flat.offsets, u, np.log(w), penalty),
                   jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
    th = res.x
    sigma = th[F + 1] if random_intercept else 0.0
    return LogisticPropensity(th[:F], th[F], sigma, center, scale, n_nodes, clip)
