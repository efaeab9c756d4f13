"""Simulation design with gamma event and censoring times, and its truth oracles.

Covariate layout of generated data: columns 0-9 are unit covariates
(0-4 standard normal, 5-9 Bernoulli(0.5)); columns 10-14 are the five
cluster-level covariates repeated on every unit row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import ndtr

from .data import ClusterObservation, Dataset, N_MAX
from .errors import UnsupportedTransform
from .estimands import RMST, EstimandSpec, RiskAt
from .policies import CIPS, TPB, TypeB, shifted_propensity, tpb_threshold
from .special import gamma_cdf, gammainc

N_UNIT_COV = 10
N_CLUSTER_COV = 5


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class UniformRange:
    lo: int = 5
    hi: int = 20

    def draw(self, rng, size):
        return rng.integers(self.lo, self.hi + 1, size=size)

    def support(self):
        return self.lo, self.hi


@dataclass(frozen=True)
class NegBinomial:
    """Negative binomial sizes, redrawn until they fall in [1, n_max]."""

    size: float = 1.79
    prob: float = 0.0823
    n_max: int = N_MAX

    def draw(self, rng, size):
        out = rng.negative_binomial(self.size, self.prob, size=size)
        bad = (out < 1) | (out > self.n_max)
        while bad.any():
            out[bad] = rng.negative_binomial(self.size, self.prob, size=int(bad.sum()))
            bad = (out < 1) | (out > self.n_max)
        return out

    def support(self):
        return 1, self.n_max


@dataclass(frozen=True)
class Fixed:
    n: int = 10

    def draw(self, rng, size):
        return np.full(size, self.n)

    def support(self):
        return self.n, self.n


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the simulation design.

    ``sigma_b`` is the random-intercept parameter; with
    ``random_effect_scale="variance"`` it is read as a variance, otherwise as a
    standard deviation.  ``coexposure_denominator`` sets how the treated share
    of the other units is normalized: "n" divides by the cluster size,
    "n_minus_1" by the number of other units.
    """

    m: int = 200
    n_dist: object = field(default_factory=UniformRange)
    sigma_b: float = 0.5
    random_effect_scale: str = "variance"
    coexposure_denominator: str = "n"
    scale: float = 2.0
    treat_coef: tuple = (-0.1, -0.2, 0.2, 0.1, -0.3)
    event_coef: tuple = (0.1, 0.3, 0.3, 0.1, 0.1, 0.1)
    censor_coef: tuple = (0.2, 0.5, 0.5, 0.1, 0.1)

    def __post_init__(self):
        if self.sigma_b < 0 or self.scale <= 0:
            raise ValueError("sigma_b must be >= 0 and scale > 0")
        if self.random_effect_scale not in ("variance", "sd"):
            raise ValueError("random_effect_scale must be 'variance' or 'sd'")
        if self.coexposure_denominator not in ("n", "n_minus_1"):
            raise ValueError("coexposure_denominator must be 'n' or 'n_minus_1'")
        lo, hi = self.n_dist.support()
        if lo < 1 or hi > N_MAX:
            raise ValueError("cluster sizes must lie in [1, n_max]")

    @property
    def b_sd(self) -> float:
        return float(np.sqrt(self.sigma_b)) if self.random_effect_scale == "variance" \
            else float(self.sigma_b)


# ---------------------------------------------------------------------------
# structural maps

def treatment_index(cfg: DgpConfig, x: np.ndarray) -> np.ndarray:
    """Probit index of treatment before the cluster random effect."""
    c = cfg.treat_coef
    x1, x2, x6, xc1 = x[..., 0], x[..., 1], x[..., 5], x[..., 10]
    return (c[0] + c[1] * x1 + c[2] * x2 ** 2 + c[3] * (x1 > 0) * x6
            + c[4] * np.maximum(xc1, 0.5))


def coexposure(cfg: DgpConfig, k, n) -> np.ndarray:
    """Treated share of the other units given k treated others in a cluster of n."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    den = n if cfg.coexposure_denominator == "n" else n - 1.0
    return np.where(den > 0, k / np.maximum(den, 1.0), 0.0)


def event_shape(cfg: DgpConfig, x, a, abar) -> np.ndarray:
    c = cfg.event_coef
    x1, x2, xc1, xc2 = x[..., 0], x[..., 1], x[..., 10], x[..., 11]
    return (c[0] + c[1] * a + c[2] * np.sin(1.57 * abar) * x1 ** 2 + c[3] * a * abar
            + c[4] * x2 ** 2 * np.maximum(xc1, 0.1) + c[5] * (xc1 * xc2 < 0.5))


def censor_shape(cfg: DgpConfig, x, a, abar) -> np.ndarray:
    c = cfg.censor_coef
    x1, x2, xc2 = x[..., 0], x[..., 1], x[..., 11]
    return (c[0] + c[1] * a + c[2] * abar * x2 ** 2 + c[3] * np.maximum(x1, 0.1)
            + c[4] * (xc2 < 0.5))


def marginal_propensity(cfg: DgpConfig, x) -> np.ndarray:
    """P(A = 1 | X) with the random effect integrated out."""
    return ndtr(treatment_index(cfg, x) / np.sqrt(1.0 + cfg.b_sd ** 2))


def quadrature(n_nodes: int, sd: float):
    """Gauss-Hermite nodes and weights for a N(0, sd^2) variable."""
    if sd == 0 or n_nodes <= 1:
        return np.zeros(1), np.ones(1)
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    return sd * z, w / w.sum()


def mixture_probs(cfg: DgpConfig, x, n_nodes: int = 20):
    """Node treatment probabilities (n, G) and weights (G,) of the true law H."""
    b, w = quadrature(n_nodes, cfg.b_sd)
    return ndtr(treatment_index(cfg, x)[:, None] + b[None, :]), w


# ---------------------------------------------------------------------------
# data generation

@dataclass
class HiddenTruth:
    t: np.ndarray
    c: np.ndarray
    b: np.ndarray   # one entry per cluster


def draw_covariates(cfg: DgpConfig, rng, m: int):
    sizes = cfg.n_dist.draw(rng, m).astype(int)
    total = int(sizes.sum())
    cl = np.repeat(np.arange(m), sizes)
    xc = rng.standard_normal((m, N_CLUSTER_COV))
    xu = np.empty((total, N_UNIT_COV))
    xu[:, :5] = rng.standard_normal((total, 5))
    xu[:, 5:] = rng.random((total, 5)) < 0.5
    x = np.hstack([xu, xc[cl]])
    return sizes, cl, x


def generate_dataset(cfg: DgpConfig, seed: int, m: int | None = None):
    """Simulate one dataset; returns (Dataset, HiddenTruth)."""
    m = cfg.m if m is None else m
    rng = np.random.default_rng([int(seed), 0x5D6])
    sizes, cl, x = draw_covariates(cfg, rng, m)
    b = rng.standard_normal(m) * cfg.b_sd
    pi = ndtr(treatment_index(cfg, x) + b[cl])
    a = (rng.random(cl.shape[0]) < pi).astype(np.int8)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    k = np.add.reduceat(a.astype(int), offsets[:-1])[cl] - a
    abar = coexposure(cfg, k, sizes[cl])
    t = rng.gamma(event_shape(cfg, x, a, abar), cfg.scale)
    c = rng.gamma(censor_shape(cfg, x, a, abar), cfg.scale)
    y = np.minimum(t, c)
    delta = (t <= c).astype(np.int8)
    width = len(str(m))
    clusters = tuple(
        ClusterObservation(f"c{i:0{width}d}", y[s:e], delta[s:e], a[s:e], x[s:e])
        for i, (s, e) in enumerate(zip(offsets[:-1], offsets[1:])))
    return Dataset(clusters, x.shape[1]), HiddenTruth(t, c, b)


# ---------------------------------------------------------------------------
# truth oracles

def expected_outcome(transform, shape, scale: float):
    """E[R(T)] for T ~ Gamma(shape, scale)."""
    if isinstance(transform, RiskAt):
        return gamma_cdf(transform.tau, shape, scale)
    if isinstance(transform, RMST):
        h = transform.h
        return (shape * scale * gammainc(shape + 1.0, h / scale)
                + h * (1.0 - gammainc(shape, h / scale)))
    raise UnsupportedTransform(f"no closed form for {type(transform).__name__}")


@numba.njit(cache=True)
def _loo_counts(p):
    """Leave-one-out treated-count distributions: out[j, k] = P(sum_{l!=j} A_l = k)."""
    n = p.shape[0]
    pre = np.zeros((n + 1, n + 1))
    suf = np.zeros((n + 1, n + 1))
    pre[0, 0] = 1.0
    for j in range(n):
        for k in range(j + 2):
            v = pre[j, k] * (1.0 - p[j])
            if k > 0:
                v += pre[j, k - 1] * p[j]
            pre[j + 1, k] = v
    suf[n, 0] = 1.0
    for j in range(n - 1, -1, -1):
        for k in range(n - j + 1):
            v = suf[j + 1, k] * (1.0 - p[j])
            if k > 0:
                v += suf[j + 1, k - 1] * p[j]
            suf[j, k] = v
    out = np.zeros((n, n))
    for j in range(n):
        for k1 in range(j + 1):
            a = pre[j, k1]
            if a == 0.0:
                continue
            for k2 in range(n - j):
                out[j, k1 + k2] += a * suf[j + 1, k2]
    return out


@numba.njit(cache=True)
def _node_tails(offsets, p, thresh):
    """P(number treated >= thresh) under each node's product law, shape (m, G)."""
    m = offsets.shape[0] - 1
    G = p.shape[1]
    out = np.zeros((m, G))
    for i in range(m):
        s = offsets[i]
        n = offsets[i + 1] - s
        for g in range(G):
            dp = np.zeros(n + 1)
            dp[0] = 1.0
            for j in range(n):
                pj = p[s + j, g]
                for k in range(j + 1, 0, -1):
                    dp[k] = dp[k] * (1.0 - pj) + dp[k - 1] * pj
                dp[0] *= 1.0 - pj
            out[i, g] = min(dp[thresh[i]:].sum(), 1.0)
    return out


@numba.njit(cache=True)
def _block_kernel(offsets, p, w, thresh, norm, r):
    """Block values (mu, mu1, mu0) per cluster.

    p: (units, G) node probabilities; w: (G,) node weights; thresh: per-cluster
    count threshold; norm: (clusters, G) probability of reaching it, used to
    condition each node's law; r: (units, 2, nmax)
    expected outcomes by own treatment and number of treated others.
    """
    m = offsets.shape[0] - 1
    G = p.shape[1]
    out = np.zeros((m, 3))
    for i in range(m):
        s = offsets[i]
        n = offsets[i + 1] - s
        c = thresh[i]
        joint = np.zeros((n, 2, n))
        for g in range(G):
            loo = _loo_counts(p[s:s + n, g].copy())
            for j in range(n):
                pj = p[s + j, g]
                for k in range(n):
                    base = w[g] * loo[j, k] / norm[i, g]
                    if k >= c:
                        joint[j, 0, k] += base * (1.0 - pj)
                    if k + 1 >= c:
                        joint[j, 1, k] += base * pj
        mu = 0.0
        mu1 = 0.0
        mu0 = 0.0
        for j in range(n):
            for k in range(n):
                pv0 = joint[j, 0, k]
                pv1 = joint[j, 1, k]
                mu += pv0 * r[s + j, 0, k] + pv1 * r[s + j, 1, k]
                mu1 += (pv0 + pv1) * r[s + j, 1, k]
                mu0 += (pv0 + pv1) * r[s + j, 0, k]
        out[i, 0] = mu / n
        out[i, 1] = mu1 / n
        out[i, 2] = mu0 / n
    return out


def _outcome_table(cfg, transform, x, sizes, cl):
    """r[u, v, k] = E[R(T) | own treatment v, k treated others] per unit."""
    nmax = int(sizes.max())
    n = sizes[cl].astype(float)
    k = np.arange(nmax, dtype=float)
    abar = np.clip(coexposure(cfg, k[None, :], n[:, None]), 0.0, 1.0)   # (units, nmax)
    r = np.zeros((x.shape[0], 2, nmax))
    valid = k[None, :] < n[:, None]
    xx = x[:, None, :]
    for v in (0, 1):
        shape = event_shape(cfg, xx, float(v), abar)
        r[:, v, :] = np.where(valid, expected_outcome(transform, np.maximum(shape, 1e-12),
                                                      cfg.scale), 0.0)
    return r


TPB_CONDITIONING = ("mixture", "random_effect")


def _policy_law(cfg, policy, x, sizes, cl, mc_b, tpb_conditioning="mixture"):
    """Node probabilities, weights, thresholds and (m, G) normalizers of a policy."""
    m = sizes.shape[0]
    if isinstance(policy, TypeB):
        return (np.full((x.shape[0], 1), policy.alpha), np.ones(1),
                np.zeros(m, dtype=np.int64), np.ones((m, 1)))
    if isinstance(policy, CIPS):
        pi = marginal_propensity(cfg, x)
        return (shifted_propensity(pi, policy.delta)[:, None], np.ones(1),
                np.zeros(m, dtype=np.int64), np.ones((m, 1)))
    if isinstance(policy, TPB):
        if tpb_conditioning not in TPB_CONDITIONING:
            raise ValueError(f"tpb_conditioning must be one of {TPB_CONDITIONING}")
        p, w = mixture_probs(cfg, x, mc_b)
        thresh = np.array([tpb_threshold(policy.rho, int(n)) for n in sizes], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        norm = _node_tails(offsets, np.ascontiguousarray(p), thresh)
        if tpb_conditioning == "mixture":
            norm = np.repeat((norm @ w)[:, None], w.shape[0], axis=1)
        return p, w, thresh, np.maximum(norm, 1e-300)
    raise TypeError(f"unsupported policy {policy!r}")


def block_means(cfg: DgpConfig, transform, policies, mc_clusters: int, seed: int,
                mc_b: int = 20, chunk: int = 20000, tpb_conditioning: str = "mixture"):
    """Per-cluster block values (mu, mu1, mu0) for several policies.

    Returns a dict policy -> array (mc_clusters, 3) computed on one common
    Monte Carlo draw of clusters.  TPB laws condition the allocation law
    given (X, N) on the threshold (``"mixture"``, the identified target) or
    condition within each value of the cluster intercept and then average
    (``"random_effect"``).
    """
    rng = np.random.default_rng([int(seed), 0x7247])
    out = {pol: [] for pol in policies}
    done = 0
    while done < mc_clusters:
        size = min(chunk, mc_clusters - done)
        sizes, cl, x = draw_covariates(cfg, rng, size)
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        r = _outcome_table(cfg, transform, x, sizes, cl)
        for pol in policies:
            p, w, thresh, norm = _policy_law(cfg, pol, x, sizes, cl, mc_b, tpb_conditioning)
            out[pol].append(_block_kernel(offsets, np.ascontiguousarray(p), w, thresh, norm, r))
        done += size
    return {pol: np.concatenate(v) for pol, v in out.items()}


_BLOCK_INDEX = {"mu": 0, "mu1": 1, "mu0": 2}


def truth_samples(cfg: DgpConfig, specs, mc_clusters: int, seed: int, mc_b: int = 20,
                  tpb_conditioning: str = "mixture"):
    """Per-cluster truth contributions for each estimand, shape (mc_clusters, len(specs)).

    Estimands sharing a transform are computed from one set of clusters, so
    their Monte Carlo errors are correlated.
    """
    specs = list(specs)
    out = np.zeros((mc_clusters, len(specs)))
    by_transform: dict = {}
    for i, s in enumerate(specs):
        by_transform.setdefault(s.transform, []).append(i)
    for transform, idx in by_transform.items():
        pols = []
        for i in idx:
            for _, _, pol in specs[i].components():
                if pol not in pols:
                    pols.append(pol)
        blocks = block_means(cfg, transform, pols, mc_clusters, seed, mc_b,
                             tpb_conditioning=tpb_conditioning)
        for i in idx:
            for coef, block, pol in specs[i].components():
                out[:, i] += coef * blocks[pol][:, _BLOCK_INDEX[block]]
    return out


def true_value_mc(cfg: DgpConfig, spec: EstimandSpec, mc_clusters: int = 100000,
                  mc_b: int = 20, seed: int = 0, tpb_conditioning: str = "mixture") -> float:
    """Monte Carlo truth of any supported estimand."""
    return float(truth_samples(cfg, [spec], mc_clusters, seed, mc_b, tpb_conditioning).mean())


def true_value_typeb(cfg: DgpConfig, transform, alpha: float, kind: str = "mu",
                     mc_clusters: int = 200000, seed: int = 0,
                     alpha_ref: float = 0.45) -> float:
    """Truth of a Type B estimand; binomial co-treatment sums per cluster."""
    if not isinstance(transform, (RiskAt, RMST)):
        raise UnsupportedTransform("Type B truth supports RiskAt and RMST")
    ref = None if kind in ("mu", "mu1", "mu0", "de") else TypeB(alpha_ref)
    spec = EstimandSpec(kind, transform, TypeB(alpha), ref)
    return true_value_mc(cfg, spec, mc_clusters, 1, seed)
