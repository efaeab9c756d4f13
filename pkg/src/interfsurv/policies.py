"""Treatment allocation policies, their conditional influence functions and
the estimand weight vectors built from them.

Allocation laws for a cluster are represented by :class:`AllocationModel`, a
finite mixture of independent Bernoulli vectors.  One mixture node gives the
usual product form; several nodes represent a random cluster intercept
integrated out by quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DegenerateTail, LengthMismatch, UnsupportedPolicy

PI_FLOOR = 0.01
H_FLOOR = 1e-6
_P_EPS = 1e-15


def all_allocations(n: int) -> np.ndarray:
    """All 2**n binary vectors of length n, shape (2**n, n)."""
    codes = np.arange(2 ** n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(np.int8)


# ---------------------------------------------------------------------------
# allocation laws

class AllocationModel:
    """P(A = a) = sum_g w_g prod_j p_jg^a_j (1 - p_jg)^(1 - a_j)."""

    def __init__(self, p, weights=None):
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if weights is None:
            weights = np.ones(p.shape[1])
        w = np.asarray(weights, dtype=float)
        if w.shape[0] != p.shape[1]:
            raise LengthMismatch("one weight per mixture node is required")
        self.p = np.clip(p, _P_EPS, 1.0 - _P_EPS)
        self.w = w / w.sum()
        self._lf = np.stack([np.log1p(-self.p), np.log(self.p)], axis=-1)  # (n, G, 2)

    @classmethod
    def product(cls, pi) -> "AllocationModel":
        return cls(np.asarray(pi, dtype=float)[:, None], np.ones(1))

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.p.shape[1]

    @property
    def marginals(self) -> np.ndarray:
        return self.p @ self.w

    def clipped(self, floor: float) -> "AllocationModel":
        return AllocationModel(np.clip(self.p, floor, 1.0 - floor), self.w)

    def node_logf(self, allocs: np.ndarray) -> np.ndarray:
        """log prod_j f_jg(a_j) for each allocation and node, shape (M, G)."""
        allocs = np.asarray(allocs)
        return allocs @ self._lf[:, :, 1] + (1 - allocs) @ self._lf[:, :, 0]

    def prob(self, allocs) -> np.ndarray:
        allocs = np.atleast_2d(np.asarray(allocs, dtype=np.int8))
        if allocs.shape[1] != self.n:
            raise LengthMismatch(f"allocation length {allocs.shape[1]} != cluster size {self.n}")
        return np.exp(self.node_logf(allocs)) @ self.w

    def prob_flipped(self, allocs: np.ndarray) -> np.ndarray:
        """H(a with unit j set to v), shape (M, n, 2)."""
        allocs = np.asarray(allocs, dtype=np.int8)
        base = np.exp(self.node_logf(allocs)) * self.w          # (M, G)
        own = np.where(allocs[:, :, None] == 1, self._lf[None, :, :, 1],
                       self._lf[None, :, :, 0])                  # (M, n, G)
        ratio = np.exp(self._lf[None, :, :, :] - own[:, :, :, None])  # (M, n, G, 2)
        return np.einsum("mg,mjgv->mjv", base, ratio)

    def count_pmf(self) -> np.ndarray:
        """Distribution of the number of treated units, length n + 1."""
        dp = np.zeros((self.n_nodes, self.n + 1))
        dp[:, 0] = 1.0
        for j in range(self.n):
            pj = self.p[j][:, None]
            shifted = np.zeros_like(dp)
            shifted[:, 1:] = dp[:, :-1]
            dp = dp * (1.0 - pj) + shifted * pj
        return np.clip(self.w @ dp, 0.0, 1.0)

    def count_tail(self) -> np.ndarray:
        """tail[k] = P(number treated >= k), k = 0..n."""
        tail = np.cumsum(self.count_pmf()[::-1])[::-1]
        tail = np.minimum.accumulate(np.clip(tail, 0.0, 1.0))
        tail[0] = 1.0
        return tail

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        nodes = rng.choice(self.n_nodes, size=size, p=self.w) if self.n_nodes > 1 \
            else np.zeros(size, dtype=int)
        return (rng.random((size, self.n)) < self.p[:, nodes].T).astype(np.int8)


@dataclass(frozen=True, eq=False)
class ClusterPolicyContext:
    """Fitted allocation law of one cluster, as seen by the policies."""

    n: int
    pi_hat: np.ndarray
    count_tail: np.ndarray
    model: AllocationModel
    x: np.ndarray | None = None

    @classmethod
    def from_model(cls, model: AllocationModel, x=None, pi_floor: float = PI_FLOOR):
        if pi_floor > 0:
            model = model.clipped(pi_floor)
        return cls(model.n, model.marginals, model.count_tail(), model, x)

    @classmethod
    def from_pi(cls, pi, x=None, pi_floor: float = PI_FLOOR):
        return cls.from_model(AllocationModel.product(pi), x, pi_floor)

    def h(self, allocs) -> np.ndarray:
        return self.model.prob(allocs)


# ---------------------------------------------------------------------------
# policies

@dataclass
class PolicyTerms:
    """Per-allocation policy quantities for a batch of allocations.

    q: Q(a); q_minus: Q(a_{-j}) = sum_v Q(v, a_{-j}); phi: CIF at a;
    phi_minus: CIF at a_{-j} (summed over the own treatment).
    """

    q: np.ndarray
    q_minus: np.ndarray
    phi: np.ndarray
    phi_minus: np.ndarray


def _check(allocs: np.ndarray, ctx: ClusterPolicyContext) -> np.ndarray:
    allocs = np.atleast_2d(np.asarray(allocs, dtype=np.int8))
    if allocs.shape[1] != ctx.n:
        raise LengthMismatch(f"allocation length {allocs.shape[1]} != cluster size {ctx.n}")
    return allocs


class _Bernoulli:
    """Shared code for policies that treat units independently."""

    def unit_probs(self, ctx: ClusterPolicyContext) -> np.ndarray:
        raise NotImplementedError

    def _cif_parts(self, a_obs, ctx):
        return None

    def point_mass(self, a_obs, ctx) -> float:
        return 0.0

    def terms(self, allocs, a_obs, ctx: ClusterPolicyContext, smooth: bool = False) -> PolicyTerms:
        allocs = _check(allocs, ctx)
        p = self.unit_probs(ctx)
        f = np.where(allocs == 1, p, 1.0 - p)
        q = np.prod(f, axis=1)
        q_minus = _prod_except(f)
        parts = self._cif_parts(a_obs, ctx)
        if parts is None:
            zero = np.zeros_like(q)
            return PolicyTerms(q, q_minus, zero, np.zeros_like(q_minus))
        c = np.where(allocs == 1, parts[1], parts[0])
        s = c.sum(axis=1)
        return PolicyTerms(q, q_minus, q * s, q_minus * (s[:, None] - c))


def _prod_except(f: np.ndarray) -> np.ndarray:
    """prod_{l != j} f[:, l] for every j, without dividing."""
    m, n = f.shape
    left = np.ones((m, n + 1))
    right = np.ones((m, n + 1))
    np.cumprod(f, axis=1, out=left[:, 1:])
    np.cumprod(f[:, ::-1], axis=1, out=right[:, 1:])
    return left[:, :n] * right[:, n - 1::-1]


@dataclass(frozen=True)
class TypeB(_Bernoulli):
    """Each unit treated independently with probability alpha."""

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise UnsupportedPolicy("Type B alpha must lie in (0, 1)")

    family = "typeb"

    @property
    def theta(self) -> float:
        return self.alpha

    @property
    def label(self) -> str:
        return f"typeb({self.alpha:g})"

    def unit_probs(self, ctx):
        return np.full(ctx.n, self.alpha)


@dataclass(frozen=True)
class CIPS(_Bernoulli):
    """Odds of treatment multiplied by delta, units independent."""

    delta: float

    def __post_init__(self):
        if not (self.delta > 0 and np.isfinite(self.delta)):
            raise UnsupportedPolicy("CIPS delta must be positive")

    family = "cips"

    @property
    def theta(self) -> float:
        return self.delta

    @property
    def label(self) -> str:
        return f"cips({self.delta:g})"

    def unit_probs(self, ctx):
        return shifted_propensity(ctx.pi_hat, self.delta)

    def _cif_parts(self, a_obs, ctx):
        a_obs = np.asarray(a_obs, dtype=float)
        if a_obs.shape[0] != ctx.n:
            raise LengthMismatch("observed allocation length does not match cluster size")
        pi = ctx.pi_hat
        d = self.delta
        pd = shifted_propensity(pi, d)
        core = d * (a_obs - pi) / (d * pi + 1.0 - pi) ** 2
        return -core / (1.0 - pd), core / pd


def shifted_propensity(pi, delta: float) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    return delta * pi / (delta * pi + 1.0 - pi)


def tpb_threshold(rho: float, n: int) -> int:
    """Smallest treated count k with k / n >= rho (exact rational comparison)."""
    return max(0, math.ceil(Fraction(rho) * n))


@dataclass(frozen=True)
class TPB:
    """Factual allocation law conditioned on a treated share of at least rho."""

    rho: float
    h_floor: float = H_FLOOR

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise UnsupportedPolicy("TPB rho must lie in [0, 1]")

    family = "tpb"

    @property
    def theta(self) -> float:
        return self.rho

    @property
    def label(self) -> str:
        return f"tpb({self.rho:g})"

    def tail_prob(self, ctx) -> tuple[int, float]:
        c = tpb_threshold(self.rho, ctx.n)
        pr = float(ctx.count_tail[c]) if c <= ctx.n else 0.0
        if pr < self.h_floor:
            raise DegenerateTail(f"P(share >= {self.rho}) = {pr:.3g} below floor {self.h_floor}")
        return c, pr

    def point_mass(self, a_obs, ctx: ClusterPolicyContext) -> float:
        """Coefficient of the CIF part concentrated on a = A (see ``terms``)."""
        c, pr = self.tail_prob(ctx)
        return float(np.asarray(a_obs).sum() >= c) / pr

    def terms(self, allocs, a_obs, ctx: ClusterPolicyContext, smooth: bool = False) -> PolicyTerms:
        """Policy quantities; ``smooth`` drops the CIF terms carrying 1(A = a).

        Those terms add point_mass(A)/n * sum_j G_j(0 | a_j, A_{-j}) to the
        allocation sum and can be added back exactly by the caller.
        """
        allocs = _check(allocs, ctx)
        a_obs = np.asarray(a_obs, dtype=np.int8)
        if a_obs.shape[0] != ctx.n:
            raise LengthMismatch("observed allocation length does not match cluster size")
        c, pr = self.tail_prob(ctx)
        cnt = allocs.sum(axis=1)
        h = ctx.model.prob(allocs)
        hf = ctx.model.prob_flipped(allocs)                         # (M, n, 2)
        cnt_v = (cnt[:, None] - allocs)[:, :, None] + np.array([0, 1])  # (M, n, 2)
        ok = cnt >= c
        ok_v = cnt_v >= c
        q = np.where(ok, h, 0.0) / pr
        q_minus = np.where(ok_v, hf, 0.0).sum(axis=2) / pr
        obs_ok = float(a_obs.sum() >= c)
        mism = allocs != a_obs
        n_mism = mism.sum(axis=1)
        same = (n_mism == 0).astype(float)
        same_minus = (n_mism[:, None] - mism) == 0                  # a_{-j} == A_{-j}
        eq_v = same_minus[:, :, None] & (a_obs[None, :, None] == np.array([0, 1]))
        if smooth:
            same = 0.0
            eq_v = 0.0
        phi = ok / pr ** 2 * (same * pr - obs_ok * h)
        phi_minus = (ok_v / pr ** 2 * (eq_v * pr - obs_ok * hf)).sum(axis=2)
        return PolicyTerms(q, q_minus, phi, phi_minus)


PolicySpec = TypeB | CIPS | TPB

FAMILIES = {"typeb": TypeB, "cips": CIPS, "tpb": TPB}


def make_policy(family: str, theta: float):
    try:
        return FAMILIES[family.lower()](float(theta))
    except KeyError:
        raise UnsupportedPolicy(f"unknown policy family {family!r}") from None


# ---------------------------------------------------------------------------
# single-allocation helpers

def q_prob(policy, a, ctx: ClusterPolicyContext) -> float:
    """Q(a | X, N; theta)."""
    a = np.asarray(a, dtype=np.int8)
    if a.shape[-1] != ctx.n:
        raise LengthMismatch(f"allocation length {a.shape[-1]} != cluster size {ctx.n}")
    # Q does not depend on the observed allocation; pass ``a`` in its place
    return float(policy.terms(a[None, :], a, ctx).q[0])


def q_marginal_minus_j(policy, a_minus_j, j: int, ctx: ClusterPolicyContext) -> float:
    """Q(a_{-j}) = sum over the own treatment of unit j (0-based index)."""
    a_minus_j = np.asarray(a_minus_j, dtype=np.int8).reshape(-1)
    if a_minus_j.shape[0] != ctx.n - 1 or not 0 <= j < ctx.n:
        raise LengthMismatch("a_minus_j must have length n - 1 and j must index a unit")
    total = 0.0
    for v in (0, 1):
        total += q_prob(policy, np.insert(a_minus_j, j, v), ctx)
    return total


def cif_q(policy, a_obs, a, ctx: ClusterPolicyContext) -> float:
    """Conditional influence function of Q at allocation ``a`` given observed ``a_obs``."""
    a = np.asarray(a, dtype=np.int8)
    a_obs = np.asarray(a_obs, dtype=np.int8)
    if a.shape[0] != ctx.n or a_obs.shape[0] != ctx.n:
        raise LengthMismatch("allocation length does not match cluster size")
    return float(policy.terms(a[None, :], a_obs, ctx).phi[0])


def block_arrays(block: str, allocs: np.ndarray, t: PolicyTerms, n: int):
    """Weight and CIF matrices (M, n) of a building block."""
    if block == "mu":
        w = np.repeat(t.q[:, None] / n, n, axis=1)
        phi = np.repeat(t.phi[:, None] / n, n, axis=1)
        return w, phi
    ind = allocs == (1 if block == "mu1" else 0)
    return ind * t.q_minus / n, ind * t.phi_minus / n


def estimand_weights(spec, a, ctx: ClusterPolicyContext) -> np.ndarray:
    """Weight vector w(a, X, N) of an estimand (length n)."""
    a = _check(a, ctx)
    out = np.zeros(ctx.n)
    for coef, block, pol in spec.components():
        t = pol.terms(a, np.zeros(ctx.n, dtype=np.int8), ctx)
        out += coef * block_arrays(block, a, t, ctx.n)[0][0]
    return out


def estimand_cif(spec, a_obs, a, ctx: ClusterPolicyContext) -> np.ndarray:
    """CIF vector Phi(A, X, N; a) of an estimand (length n)."""
    a = _check(a, ctx)
    a_obs = np.asarray(a_obs, dtype=np.int8)
    if a_obs.shape[0] != ctx.n:
        raise LengthMismatch("observed allocation length does not match cluster size")
    out = np.zeros(ctx.n)
    for coef, block, pol in spec.components():
        t = pol.terms(a, a_obs, ctx)
        out += coef * block_arrays(block, a, t, ctx.n)[1][0]
    return out
