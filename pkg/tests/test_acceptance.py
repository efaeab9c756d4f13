"""Acceptance suite: one test and one printed pass/fail line per criterion.

Tolerances are pinned from the acceptance criteria.  The expensive
criteria (4 and 9) run full replication loops and take most of the time.
"""

import time
from functools import lru_cache

import numpy as np

from interfsurv.bruteforce import brute_force_psi, random_world
from interfsurv.engine import Exact, InfluenceTable, Subsample, cross_fit, evaluate_fold
from interfsurv.estimands import EstimandSpec, RiskAt
from interfsurv.inference import ucb_critical_value
from interfsurv.nuisance.bundle import LearnerConfig, fit_bundle, oracle_learners
from interfsurv.policies import (CIPS, TPB, AllocationModel, ClusterPolicyContext, TypeB,
                                 all_allocations, block_arrays)
from interfsurv.reproduce import run_replications
from interfsurv.simulator import (DgpConfig, UniformRange, generate_dataset, true_value_mc,
                                  true_value_typeb, truth_samples)

CFG = DgpConfig()
TAU = RiskAt(0.2)
BLOCKS = ("mu", "mu1", "mu0")


@lru_cache(maxsize=None)
def typeb_truth(alpha, kind="mu", mc=200_000):
    return true_value_typeb(CFG, TAU, alpha, kind, mc_clusters=mc)


# ---------------------------------------------------------------------------
# 1-2: truth oracles against the published truth columns

def test_criterion_1_typeb_truths(criterion):
    published = {(0.3, "mu"): 45.1, (0.3, "mu1"): 25.2, (0.3, "mu0"): 53.7, (0.3, "de"): -28.5,
                 (0.45, "mu"): 37.6, (0.45, "mu1"): 22.5, (0.45, "mu0"): 50.0,
                 (0.45, "de"): -27.6}
    t0 = time.time()
    gaps = {key: 100 * typeb_truth(*key) - val for key, val in published.items()}
    elapsed = time.time() - t0
    worst = max(abs(g) for g in gaps.values())
    ok = worst <= 0.6 and elapsed < 300
    criterion(1, ok, f"max |truth - published| = {worst:.2f} (tol 0.6, x100), "
                     f"{elapsed:.0f}s (limit 300s)")
    assert ok


def test_criterion_2_tpb_truths(criterion):
    published = {"mu": 38.2, "mu1": 22.6, "mu0": 50.3, "de": -27.7}
    t0 = time.time()
    gaps = {k: 100 * true_value_mc(CFG, EstimandSpec(k, TAU, TPB(0.0)), 200_000) - v
            for k, v in published.items()}
    elapsed = time.time() - t0
    worst = max(abs(g) for g in gaps.values())
    ok = worst <= 0.8 and elapsed < 900
    detail = " ".join(f"{k}:{g:+.2f}" for k, g in gaps.items())
    criterion(2, ok, f"max |truth - published| = {worst:.2f} (tol 0.8, x100) [{detail}], "
                     f"{elapsed:.0f}s (limit 900s)")
    assert ok


# ---------------------------------------------------------------------------
# 3: oracle unbiasedness of the estimating function

def criterion3_specs():
    tau4 = RiskAt(0.4)
    specs = [EstimandSpec(k, TAU, TypeB(a)) for a in (0.3, 0.45)
             for k in ("mu", "mu1", "mu0", "de")]
    specs += [EstimandSpec(k, TAU, TPB(0.0)) for k in ("mu", "mu1", "mu0", "de")]
    specs += [EstimandSpec("mu0", tau4, TPB(0.25)),
              EstimandSpec("oe", TAU, TPB(0.25), TPB(0.0))]
    return specs


def test_criterion_3_oracle_unbiasedness(criterion):
    t0 = time.time()
    specs = criterion3_specs()
    from interfsurv.engine import Plan
    plan = Plan(specs)
    ds, _ = generate_dataset(CFG, seed=3030, m=20_000)
    bundle = fit_bundle(None, None, oracle_learners(CFG))
    or_part, ipw_part, _ = evaluate_fold(ds, bundle, plan, Subsample(100, 3))
    phi = np.column_stack([sum(c * (or_part[:, b, t] + ipw_part[:, b, t]) for c, b, t in terms)
                           for terms in plan.terms])
    truth_draws = truth_samples(CFG, specs, 200_000, seed=31)
    truth = truth_draws.mean(axis=0)
    mcse = np.sqrt(phi.var(axis=0, ddof=1) / phi.shape[0]
                   + truth_draws.var(axis=0, ddof=1) / truth_draws.shape[0])
    z = (phi.mean(axis=0) - truth) / mcse
    elapsed = time.time() - t0
    worst = int(np.argmax(np.abs(z)))
    ok = bool(np.all(np.abs(z) <= 3)) and elapsed < 600
    criterion(3, ok, f"{len(specs)} cells, max |mean phi - truth| / MC-SE = {abs(z[worst]):.2f} "
                     f"at {specs[worst].label} (tol 3), {elapsed:.0f}s (limit 600s)")
    assert ok


# ---------------------------------------------------------------------------
# 4 and the first half of 8: learned-nuisance replication

@lru_cache(maxsize=None)
def criterion4_runs():
    specs = [EstimandSpec(k, TAU, TypeB(0.45)) for k in BLOCKS]
    reps = run_replications(CFG, specs, 200, m=200, K=2, S=1, r=100,
                            learners=LearnerConfig(), seed=4040, B=200)
    return specs, reps


def test_criterion_4_replication(criterion):
    specs, reps = criterion4_runs()
    good = [r for r in reps if not isinstance(r, str)]
    P = np.array([r.point for r in good])
    S = np.array([r.se for r in good])
    truth = np.array([typeb_truth(0.45, k) for k in BLOCKS])
    bias = 100 * (P.mean(axis=0) - truth)
    ese = P.std(axis=0, ddof=1)
    ase = S.mean(axis=0)
    cov = 100 * (np.abs(P - truth) <= 1.959964 * S).mean(axis=0)
    ok = (len(good) == 200 and np.all(np.abs(bias) <= 1.5)
          and np.all(np.abs(ase / ese - 1) <= 0.3) and np.all((cov >= 90) & (cov <= 98)))
    cells = " | ".join(f"{k}: bias {b:+.2f} ase/ese {a / e:.2f} cov {c:.1f}"
                       for k, b, a, e, c in zip(BLOCKS, bias, ase, ese, cov))
    criterion(4, ok, f"D={len(good)}/200 [{cells}] (|bias|<=1.5, |ase/ese-1|<=0.3, cov in [90,98])")
    assert ok


# ---------------------------------------------------------------------------
# 5: exact identities

def test_criterion_5_exact_identities(criterion):
    from interfsurv.data import TimeGrid
    from interfsurv.engine import censoring_martingale
    from interfsurv.nuisance.base import ExposureQuery, HazardTableModel

    rng = np.random.default_rng(505)
    t0 = time.time()
    errs = {}
    # censoring martingale: sum_k dM_k / S^C(r_k) = 1 - Delta / S^C(Y) to 1e-12.  Summands
    # reach 1 / S^C(Y) (up to ~4e4 here), whose own rounding is added to the tolerance.
    worst = 0.0
    worst_abs = 0.0
    for _ in range(1000):
        L = int(rng.integers(1, 10))
        h = rng.uniform(0.0, 0.9, L)
        pts = np.cumsum(rng.uniform(0.1, 2.0, L))
        model = HazardTableModel(TimeGrid(pts), h[None, :], lambda q: np.zeros(len(q), int),
                                 "censoring")
        n = 6
        idx = rng.integers(0, L, n)
        y, d = pts[idx], rng.integers(0, 2, n)
        q = ExposureQuery(np.zeros((n, 1)), np.zeros((n, 1)), np.zeros(n), np.zeros(n),
                          np.ones(n))
        got = censoring_martingale(model, y, d, q).weighted_sum()
        sc = np.cumprod(1 - h)[idx]
        err = np.abs(got - (1 - d / sc))
        allowance = 8 * np.finfo(float).eps / sc
        worst_abs = max(worst_abs, float(err.max()))
        worst = max(worst, float((err - allowance).max()))
    errs["martingale beyond rounding"] = (worst, 1e-12)

    def random_ctx(n):
        return ClusterPolicyContext.from_model(
            AllocationModel(rng.uniform(0.05, 0.95, (n, 3)), rng.dirichlet(np.ones(3))),
            pi_floor=0.0)

    # normalization, n <= 10
    worst = 0.0
    for n in range(1, 11):
        allocs = all_allocations(n)
        for pol in (TypeB(rng.uniform(0.1, 0.9)), CIPS(rng.uniform(0.2, 5)),
                    TPB(rng.uniform(0, 1))):
            ctx = random_ctx(n) if isinstance(pol, TPB) else \
                ClusterPolicyContext.from_pi(rng.uniform(0.05, 0.95, n), pi_floor=0.0)
            if isinstance(pol, TPB) and pol.tail_prob(ctx)[1] < 1e-8:
                continue
            worst = max(worst, abs(pol.terms(allocs, allocs[0], ctx).q.sum() - 1.0))
    errs["normalization"] = (worst, 1e-10)

    # conditional mean-zero CIF by exhaustive sums, n <= 6, for every block
    worst = 0.0
    for n in range(1, 7):
        allocs = all_allocations(n)
        for pol in (TypeB(0.4), CIPS(2.5), CIPS(0.4), TPB(0.0), TPB(0.34), TPB(0.75)):
            ctx = random_ctx(n) if isinstance(pol, TPB) else \
                ClusterPolicyContext.from_pi(rng.uniform(0.05, 0.95, n), pi_floor=0.0)
            h = ctx.h(allocs)
            for block in BLOCKS:
                total = np.zeros((allocs.shape[0], n))
                for a_obs, p in zip(allocs, h):
                    total += p * block_arrays(block, allocs, pol.terms(allocs, a_obs, ctx), n)[1]
                worst = max(worst, float(np.abs(total).max()))
    errs["cif mean zero"] = (worst, 1e-10)

    # TPB(0) weights equal the factual weights; Type B CIF is zero; mu weights sum to 1/n
    exact_tpb = True
    typeb_zero = True
    worst = 0.0
    for n in range(1, 9):
        allocs = all_allocations(n)
        ctx = random_ctx(n)
        t = TPB(0.0).terms(allocs, allocs[-1], ctx)
        exact_tpb &= bool(np.array_equal(t.q, ctx.h(allocs)))
        for pol in (TypeB(0.3), CIPS(1.7), TPB(0.5)):
            tt = pol.terms(allocs, allocs[1 % len(allocs)], ctx)
            if isinstance(pol, TypeB):
                typeb_zero &= not np.any(tt.phi) and not np.any(tt.phi_minus)
            w = block_arrays("mu", allocs, tt, n)[0].sum(axis=0)
            worst = max(worst, float(np.abs(w - 1.0 / n).max()))
    errs["mu weights sum"] = (worst, 1e-14)
    elapsed = time.time() - t0
    ok = all(v <= tol for v, tol in errs.values()) and exact_tpb and typeb_zero and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e} (tol {tol:.0e})" for k, (v, tol) in errs.items())
    criterion(5, ok, f"{detail} (raw martingale error {worst_abs:.1e}), "
                     f"TPB(0)=factual exact: {exact_tpb}, Type B CIF zero: "
                     f"{typeb_zero}, {elapsed:.0f}s (limit 60s)")
    assert ok


# ---------------------------------------------------------------------------
# 6: brute-force equivalence

def test_criterion_6_brute_force(criterion):
    rng = np.random.default_rng(606)
    worst = 0.0
    n_worlds = 20
    for _ in range(n_worlds):
        world = random_world(rng)
        tau = RiskAt(float(rng.choice(world.support[:-1])))
        for pol in (TypeB(float(rng.uniform(0.1, 0.9))), CIPS(float(rng.uniform(0.3, 3.0))),
                    TPB(float(rng.choice([0.0, 0.3, 0.5, 0.7])))):
            specs = [EstimandSpec(k, tau, pol) for k in ("mu", "mu1", "mu0", "de")]
            psi, ephi = brute_force_psi(world, specs)
            worst = max(worst, float(np.abs(psi - ephi).max()))
    ok = worst <= 1e-10
    criterion(6, ok, f"{n_worlds} worlds x 3 policy families x 4 estimands, "
                     f"max |Psi - E[phi]| = {worst:.1e} (tol 1e-10)")
    assert ok


# ---------------------------------------------------------------------------
# 7: allocation subsampling

def test_criterion_7_subsampling(criterion):
    cfg = DgpConfig(n_dist=UniformRange(2, 8))
    ds, _ = generate_dataset(cfg, seed=707, m=40)
    L = oracle_learners(cfg)
    specs = [EstimandSpec("mu", RiskAt(0.3), TypeB(0.4)),
             EstimandSpec("mu1", RiskAt(0.3), TPB(0.5))]
    exact = np.array([r.point for r in cross_fit(ds, specs, 2, L, Exact(), seed=1)[1]])
    sub = np.array([r.point for r in cross_fit(ds, specs, 2, L, Subsample(5000, 1), seed=1)[1]])
    gap = float(np.abs(sub - exact).max())
    sds = []
    for r in (10, 100, 1000):
        pts = np.array([[x.point for x in cross_fit(ds, specs, 2, L, Subsample(r, s), seed=1)[1]]
                        for s in range(100)])
        sds.append(pts.std(axis=0, ddof=1))
    sds = np.array(sds)
    mono = bool(np.all(np.diff(sds, axis=0) <= 0))
    ok = gap <= 0.005 and mono
    sd_txt = "; ".join(f"{s.label}: " + " > ".join(f"{v:.4f}" for v in sds[:, i])
                       for i, s in enumerate(specs))
    criterion(7, ok, f"|sub(5000) - exact| = {gap:.4f} (tol 0.005); SD over r=10,100,1000 "
                     f"nonincreasing: {mono} [{sd_txt}]")
    assert ok


# ---------------------------------------------------------------------------
# 8: bounded estimators

def bounded_gap(m, reps, seed):
    specs = [EstimandSpec(k, TAU, TypeB(0.45)) for k in BLOCKS]
    L = oracle_learners(CFG)
    gaps = []
    for rep in range(reps):
        ds, _ = generate_dataset(CFG, seed + rep, m)
        table, _ = cross_fit(ds, specs, 2, L, Subsample(100, rep), False, seed=rep)
        bounded = InfluenceTable(table.plan, table.folds, table.cluster_ids, table.or_part,
                                 table.ipw_part, table.ipw_weight, True)
        gaps.append(np.abs(bounded.point() - table.point()))
    return float(np.median(np.array(gaps)))


def test_criterion_8_bounded(criterion):
    specs, reps = criterion4_runs()
    P = np.array([r.point for r in reps if not isinstance(r, str)])
    inside = bool(np.all((P >= 0) & (P <= 1)))
    g100 = bounded_gap(100, 60, 8100)
    g400 = bounded_gap(400, 60, 8400)
    ok = inside and g400 < g100
    criterion(8, ok, f"{P.size} bounded estimates from criterion 4 all in [0,1]: {inside}; "
                     f"median |bounded - unbounded| m=100 {g100:.4f} > m=400 {g400:.4f} "
                     f"(60 oracle reps each)")
    assert ok


# ---------------------------------------------------------------------------
# 9: uniform bands

def test_criterion_9_ucb(criterion):
    alphas = (0.3, 0.45, 0.6)
    specs = [EstimandSpec("mu", TAU, TypeB(a)) for a in alphas]
    L = oracle_learners(CFG)
    ds, _ = generate_dataset(CFG, 9000, 200)
    table, _ = cross_fit(ds, specs[:1], 2, L, Subsample(100, 0), True, seed=0)
    c_single = ucb_critical_value(table, B=20_000, seed=9).critical
    truth = np.array([typeb_truth(a) for a in alphas])
    covered = 0
    D = 200
    for rep in range(D):
        ds, _ = generate_dataset(CFG, 9100 + rep, 200)
        table, _ = cross_fit(ds, specs, 2, L, Subsample(100, rep), True, seed=rep)
        covered += ucb_critical_value(table, B=2000, seed=rep).covers(truth)
    ucov = 100 * covered / D
    ok = abs(c_single - 1.96) <= 0.05 and 88 <= ucov <= 98
    criterion(9, ok, f"single-point c = {c_single:.3f} (1.96 +/- 0.05, B=20000); UCB coverage "
                     f"{ucov:.1f}% over {D} oracle reps (in [88, 98])")
    assert ok
