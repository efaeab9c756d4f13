"""Exact computations on tiny, fully enumerated clustered survival worlds.

A world has clusters of n <= 3 units, one binary covariate per unit, a
random-intercept logistic treatment law and discrete event and censoring
hazards on at most four support points.  Hazards depend on the unit's
covariate, its own treatment and the number of treated others, so
interference is built in.  Event times never exceed the last support
point; censoring times may (C = inf), so every observed time is on the
support.  Delta = 1(T < C), so censoring wins ties.

:func:`brute_force_psi` returns the estimand by direct enumeration of the
potential-outcome formula and, separately, the exact expectation of the
estimating function evaluated by the engine with the true nuisances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import expit

from .data import ClusterObservation, TimeGrid
from .engine import Exact, Plan, allocation_draws, evaluate_cluster, unit_residuals
from .errors import UnsupportedWorld
from .estimands import EstimandSpec
from .nuisance.base import ExposureQuery, HazardTableModel, PropensityModel
from .nuisance.bundle import NO_FLOORS, NuisanceBundle
from .policies import CIPS, TPB, AllocationModel, TypeB

MAX_N = 3
MAX_SUPPORT = 4


def profile_index(x, a, k, n) -> np.ndarray:
    """Hazard-table row of (cluster size, covariate, own treatment, treated others)."""
    x = np.asarray(x).astype(int)
    return (((np.asarray(n).astype(int) - 1) * 2 + x) * 2 + np.asarray(a).astype(int)) * MAX_N \
        + np.asarray(k).astype(int)


N_PROFILES = MAX_N * 2 * 2 * MAX_N


@dataclass(frozen=True, eq=False)
class TinyWorld:
    """size_pmf[n-1] = P(N = n); x_prob = P(X_j = 1); treatment logit
    alpha0 + alpha1 x_j + b with b on nodes b_nodes (weights b_weights);
    event/censor hazards (N_PROFILES, L) on ``support``."""

    support: np.ndarray
    size_pmf: np.ndarray
    x_prob: float
    alpha0: float
    alpha1: float
    b_nodes: np.ndarray
    b_weights: np.ndarray
    event_hazards: np.ndarray
    censor_hazards: np.ndarray

    def __post_init__(self):
        L = len(self.support)
        if L > MAX_SUPPORT or len(self.size_pmf) > MAX_N:
            raise UnsupportedWorld(f"worlds are limited to n <= {MAX_N} and {MAX_SUPPORT} points")
        if self.event_hazards.shape != (N_PROFILES, L) or self.censor_hazards.shape != (N_PROFILES, L):
            raise UnsupportedWorld("hazard tables must have one row per profile")
        if not np.allclose(self.event_hazards[:, -1], 1.0):
            raise UnsupportedWorld("event times must end at the last support point")
        if np.any(self.censor_hazards >= 1.0):
            raise UnsupportedWorld("censoring hazards must stay below one")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.support)

    def allocation(self, x) -> AllocationModel:
        x = np.asarray(x, dtype=float).reshape(-1)
        p = expit(self.alpha0 + self.alpha1 * x[:, None] + self.b_nodes[None, :])
        return AllocationModel(p, self.b_weights)


def random_world(rng: np.random.Generator, n_max: int = 3, n_support: int = 4,
                 interference: bool = True, treatment_effect: bool = True) -> TinyWorld:
    """Draw a random world.  Without ``treatment_effect`` hazards ignore (a, k)."""
    support = np.sort(rng.choice(np.arange(1, 10), size=n_support, replace=False)).astype(float)
    size_pmf = rng.dirichlet(np.ones(n_max))
    base = rng.uniform(0.1, 0.6, size=(2, n_support))
    ev = np.empty((N_PROFILES, n_support))
    ce = np.empty((N_PROFILES, n_support))
    for n in range(1, MAX_N + 1):
        for x in (0, 1):
            for a in (0, 1):
                for k in range(MAX_N):
                    row = profile_index(x, a, k, n)
                    if treatment_effect:
                        shift = 0.15 * a + (0.1 * k if interference else 0.0)
                        ev[row] = np.clip(base[x] + shift + rng.uniform(-0.05, 0.05, n_support),
                                          0.02, 0.95)
                    else:
                        ev[row] = base[x]
                    ce[row] = rng.uniform(0.05, 0.4, n_support)
    ev[:, -1] = 1.0
    return TinyWorld(support, size_pmf, float(rng.uniform(0.2, 0.8)),
                     float(rng.normal(0, 0.5)), float(rng.normal(0, 1.0)),
                     np.array([-0.7, 0.7]) * rng.uniform(0.2, 1.5), np.array([0.5, 0.5]),
                     ev, ce)


class _WorldPropensity(PropensityModel):
    def __init__(self, world: TinyWorld):
        self.world = world

    def allocation(self, x):
        return self.world.allocation(x)


def _profile(q: ExposureQuery) -> np.ndarray:
    return profile_index(q.x[:, 0], q.a, q.k, q.n)


def oracle_bundle(world: TinyWorld) -> NuisanceBundle:
    grid = world.grid
    return NuisanceBundle(_WorldPropensity(world),
                          HazardTableModel(grid, world.event_hazards, _profile, "event"),
                          HazardTableModel(grid, world.censor_hazards, _profile, "censoring"),
                          floors=NO_FLOORS)


# ---------------------------------------------------------------------------
# route 1: the potential-outcome formula

def _time_pmf(h: np.ndarray) -> np.ndarray:
    """P(T = r_k) for k = 1..L and P(T > r_L) from discrete hazards."""
    surv = np.concatenate([[1.0], np.cumprod(1.0 - h)])
    return np.concatenate([surv[:-1] * h, [surv[-1]]])


def _mean_outcome(world: TinyWorld, transform, x, a, k, n) -> float:
    pmf = _time_pmf(world.event_hazards[profile_index(x, a, k, n)])
    vals = np.concatenate([transform(world.support), [transform.tail(world.support[-1])]])
    return float(pmf @ vals)


def _policy_prob(policy, a: tuple, model: AllocationModel) -> float:
    """Q(a) straight from the policy definitions."""
    n = len(a)
    if isinstance(policy, TypeB):
        return math.prod(policy.alpha if v else 1.0 - policy.alpha for v in a)
    if isinstance(policy, CIPS):
        pi = model.marginals
        d = policy.delta
        out = 1.0
        for j, v in enumerate(a):
            pd = d * pi[j] / (d * pi[j] + 1.0 - pi[j])
            out *= pd if v else 1.0 - pd
        return out
    if isinstance(policy, TPB):
        c = max(0, math.ceil(Fraction(policy.rho) * n))
        allocs = list(itertools.product((0, 1), repeat=n))
        probs = {al: float(model.prob(np.array(al))[0]) for al in allocs}
        tail = sum(p for al, p in probs.items() if sum(al) >= c)
        return probs[tuple(a)] / tail if sum(a) >= c else 0.0
    raise TypeError(f"unsupported policy {policy!r}")


def _block_value(world, transform, policy, block, x) -> float:
    n = len(x)
    model = world.allocation(x)
    total = 0.0
    for a in itertools.product((0, 1), repeat=n):
        q = _policy_prob(policy, a, model)
        if q == 0.0:
            continue
        for j in range(n):
            own = a[j] if block == "mu" else (1 if block == "mu1" else 0)
            k = sum(a) - a[j]
            total += q * _mean_outcome(world, transform, x[j], own, k, n) / n
    return total


def _covariate_vectors(world: TinyWorld):
    for n in range(1, len(world.size_pmf) + 1):
        pn = world.size_pmf[n - 1]
        if pn == 0:
            continue
        for x in itertools.product((0, 1), repeat=n):
            px = math.prod(world.x_prob if v else 1.0 - world.x_prob for v in x)
            yield n, np.array(x, dtype=float), pn * px


def enumerate_psi(world: TinyWorld, spec: EstimandSpec) -> float:
    """sum_{n, x} P(n, x) sum_a w(a, x, n)' E[R(T) | a, x, n] by enumeration."""
    total = 0.0
    for n, x, prob in _covariate_vectors(world):
        for coef, block, policy in spec.components():
            total += prob * coef * _block_value(world, spec.transform, policy, block, x)
    return total


# ---------------------------------------------------------------------------
# route 2: expectation of the estimating function

def _unit_outcomes(world: TinyWorld, row: int):
    """All (Y, Delta) values of one unit and their probabilities."""
    ft = _time_pmf(world.event_hazards[row])[:-1]          # T finite
    fc = _time_pmf(world.censor_hazards[row])              # last entry: C = inf
    L = len(world.support)
    ys, ds, ps = [], [], []
    for k in range(L):
        # event observed at r_k: T = r_k and C > r_k
        ys.append(world.support[k]); ds.append(1); ps.append(ft[k] * fc[k + 1:].sum())
        # censored at r_k: C = r_k and T >= r_k
        ys.append(world.support[k]); ds.append(0); ps.append(fc[k] * ft[k:].sum())
    return np.array(ys), np.array(ds), np.array(ps)


def expected_phi(world: TinyWorld, specs) -> np.ndarray | float:
    """E[phi] with the true nuisances, phi computed by the engine.

    ``specs`` is one estimand (float result) or a list (array result).
    """
    single = isinstance(specs, EstimandSpec)
    plan = Plan([specs] if single else specs)
    bundle = oracle_bundle(world)
    total = np.zeros(len(plan.specs))
    for n, x, prob in _covariate_vectors(world):
        xm = x.reshape(n, 1)
        xbar = np.zeros_like(xm)
        model = world.allocation(x)
        dummy = ClusterObservation("w", np.full(n, world.support[0]), np.zeros(n),
                                   np.zeros(n), xm)
        ctx = bundle.context(dummy)
        allocs, wts = allocation_draws(Exact(), ctx, dummy)
        kk = allocs.sum(axis=1)[:, None] - allocs
        q_all = ExposureQuery(np.repeat(xm, 2 * n, axis=0), np.repeat(xbar, 2 * n, axis=0),
                              np.tile(np.repeat([0.0, 1.0], n), n),
                              np.tile(np.arange(n, dtype=float), 2 * n),
                              np.full(2 * n * n, float(n)))
        g0 = np.stack([bundle.event.risk_mean(q_all, tr) for tr in plan.transforms])
        gtab = g0.reshape(len(plan.transforms), n, 2, n)
        for i, a in enumerate(allocs):
            h = float(model.prob(a)[0])
            resid = np.zeros((n, len(plan.transforms)))
            for j in range(n):
                row = int(profile_index(x[j], a[j], kk[i, j], n))
                ys, ds, ps = _unit_outcomes(world, row)
                q = ExposureQuery(np.full((ys.size, 1), x[j]), np.zeros((ys.size, 1)),
                                  np.full(ys.size, float(a[j])), np.full(ys.size, float(kk[i, j])),
                                  np.full(ys.size, float(n)))
                r = unit_residuals(bundle.event, bundle.censor, q, ys, ds, plan.transforms)
                resid[j] = ps @ r
            cluster = ClusterObservation("w", np.full(n, world.support[0]), np.zeros(n), a, xm)
            or_val, ipw_val, _ = evaluate_cluster(cluster, ctx, gtab, resid, plan, allocs, wts)
            for e, terms in enumerate(plan.terms):
                val = sum(coef * (or_val[b, t] + ipw_val[b, t]) for coef, b, t in terms)
                total[e] += prob * h * val
    return float(total[0]) if single else total


def brute_force_psi(world: TinyWorld, spec):
    """(enumerated Psi, exact E[phi]) for one estimand or, elementwise, a list."""
    if isinstance(spec, EstimandSpec):
        return enumerate_psi(world, spec), expected_phi(world, spec)
    return np.array([enumerate_psi(world, s) for s in spec]), expected_phi(world, list(spec))
