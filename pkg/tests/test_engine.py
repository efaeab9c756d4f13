import itertools

import numpy as np
import pytest

from interfsurv.data import ClusterObservation, TimeGrid, build_time_grid
from interfsurv.engine import (Exact, Subsample, censoring_martingale,
                               cluster_influence, cross_fit, g_function, sbs_estimate,
                               unit_residuals)
from interfsurv.errors import FoldViolation
from interfsurv.estimands import RMST, EstimandSpec, RiskAt
from interfsurv.nuisance.base import ExposureQuery, HazardTableModel, PropensityModel
from interfsurv.nuisance.bundle import (NO_FLOORS, LearnerConfig, NuisanceBundle, fit_bundle,
                                       oracle_learners)
from interfsurv.policies import AllocationModel, TypeB
from interfsurv.simulator import DgpConfig, UniformRange, generate_dataset


def query(n_rows, a=0, k=0, n=1):
    return ExposureQuery(np.zeros((n_rows, 1)), np.zeros((n_rows, 1)), np.full(n_rows, float(a)),
                         np.full(n_rows, float(k)), np.full(n_rows, float(n)))


def table_model(points, hazards, target="event"):
    h = np.atleast_2d(np.asarray(hazards, dtype=float))
    return HazardTableModel(TimeGrid(np.asarray(points, float)), h,
                            lambda q: np.zeros(len(q), dtype=int), target)


def test_g_function_examples():
    ev = table_model([1, 2, 3, 4], [1 / 4, 1 / 3, 1 / 2, 1.0])
    q = query(1)
    assert g_function(ev, RiskAt(3.0), 2.0, q)[0] == pytest.approx(0.5)
    assert g_function(ev, RiskAt(3.0), 0.0, q)[0] == pytest.approx(0.75)
    assert g_function(ev, RiskAt(3.0), 3.5, q)[0] == pytest.approx(0.0)


def test_martingale_examples():
    cens = table_model([1.0, 2.0], [0.1, 0.2], "censoring")
    q = query(2)
    mart = censoring_martingale(cens, np.array([2.0, 2.0]), np.array([0, 1]), q)
    np.testing.assert_allclose(mart.weighted_sum(), [1.0, 1.0 - 1.0 / 0.72], atol=1e-14)
    np.testing.assert_allclose(cens.grid_survival(q)[0], [0.9, 0.72])
    flat = table_model([1.0, 2.0], [0.0, 0.0], "censoring")
    mart = censoring_martingale(flat, np.array([1.0, 2.0]), np.array([0, 1]), q)
    np.testing.assert_allclose(mart.weighted_sum(), [1.0, 0.0])


def test_martingale_identity_randomized(rng):
    # sum_k dM_k / S^C(r_k) = 1 - Delta / S^C(Y) for any censoring hazards
    for _ in range(200):
        L = int(rng.integers(1, 8))
        h = rng.uniform(0.0, 0.9, L)
        cens = table_model(np.arange(1, L + 1), h, "censoring")
        y = rng.integers(1, L + 1, 5).astype(float)
        d = rng.integers(0, 2, 5)
        mart = censoring_martingale(cens, y, d, query(5))
        sc = np.cumprod(1 - h)[y.astype(int) - 1]
        np.testing.assert_allclose(mart.weighted_sum(), 1 - d / sc, atol=1e-12)


def test_no_censoring_gives_zero_augmentation():
    ev = table_model([1.0, 2.0, 3.0], [0.2, 0.3, 1.0])
    cens = table_model([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], "censoring")
    y = np.array([1.0, 2.0, 3.0])
    tr = RiskAt(2.5)
    res = unit_residuals(ev, cens, query(3), y, np.ones(3), [tr])[:, 0]
    g0 = g_function(ev, tr, 0.0, query(3))
    np.testing.assert_allclose(res, tr(y) - g0, atol=1e-14)


# --- independent evaluation of the three terms on an n = 2 cluster -------

POINTS = np.array([1.0, 2.0, 3.0])
EV = np.array([[0.2, 0.3, 1.0], [0.35, 0.25, 1.0], [0.1, 0.5, 1.0], [0.3, 0.45, 1.0]])
CE = np.array([[0.1, 0.2, 0.3], [0.15, 0.1, 0.2], [0.25, 0.3, 0.1], [0.05, 0.2, 0.4]])


def _row(a, k):
    return 2 * int(a) + int(k)


class _FixedPropensity(PropensityModel):
    def __init__(self, pi):
        self.pi = np.asarray(pi)

    def allocation(self, x):
        return AllocationModel.product(self.pi)


def _bundle(pi):
    grid = TimeGrid(POINTS)
    prof = lambda q: (2 * q.a + q.k).astype(int)
    return NuisanceBundle(_FixedPropensity(pi), HazardTableModel(grid, EV, prof, "event"),
                          HazardTableModel(grid, CE, prof, "censoring"), floors=NO_FLOORS)


def _pmf(h):
    s = np.concatenate([[1.0], np.cumprod(1 - h)])
    return s[:-1] * h


def _g(row, r, tau):
    f = _pmf(EV[row])
    return sum(f[k] for k in range(3) if POINTS[k] >= r and POINTS[k] <= tau)


def _hand_phi(pi, alpha, tau, y, d, a):
    n = 2
    h = lambda al: np.prod([pi[j] if al[j] else 1 - pi[j] for j in range(n)])
    q = lambda al: np.prod([alpha if v else 1 - alpha for v in al])
    w = lambda al: np.full(n, q(al) / n)
    total = 0.0
    for al in itertools.product((0, 1), repeat=n):
        total += sum(w(al)[j] * _g(_row(al[j], sum(al) - al[j]), 0.0, tau) for j in range(n))
    wa = w(a)
    for j in range(n):
        row = _row(a[j], sum(a) - a[j])
        sc = np.cumprod(1 - CE[row])
        st = np.cumprod(1 - EV[row])
        st_prev = np.concatenate([[1.0], st[:-1]])
        iy = int(np.flatnonzero(POINTS == y[j])[0])
        ipcw = d[j] * float(y[j] <= tau) / sc[iy] - _g(row, 0.0, tau)
        aug = 0.0
        for k in range(iy + 1):
            dm = float(k == iy and d[j] == 0) - CE[row, k]
            aug += _g(row, POINTS[k], tau) / (sc[k] * st_prev[k]) * dm
        total += wa[j] * (ipcw + aug) / h(a)
    return total


@pytest.mark.parametrize("y,d,a", [((1.0, 3.0), (1, 0), (1, 0)), ((2.0, 2.0), (0, 1), (1, 1)),
                                   ((3.0, 1.0), (1, 1), (0, 0))])
def test_exact_sum_matches_hand_evaluation(y, d, a):
    pi = np.array([0.35, 0.6])
    spec = EstimandSpec("mu", RiskAt(2.5), TypeB(0.4))
    obs = ClusterObservation("z", y, d, a, np.zeros((2, 1)))
    got = cluster_influence(obs, _bundle(pi), spec, Exact())
    assert got == pytest.approx(_hand_phi(pi, 0.4, 2.5, y, d, a), abs=1e-13)


def test_fold_violation():
    cfg = DgpConfig()
    ds, _ = generate_dataset(cfg, 1, 6)
    bundle = fit_bundle(ds.subset([0, 1, 2, 3]), build_time_grid(ds), LearnerConfig(), fold=1)
    with pytest.raises(FoldViolation):
        bundle.check(ds.clusters[0])


@pytest.fixture(scope="module")
def small_data():
    ds, _ = generate_dataset(DgpConfig(), 11, 40)
    return ds


def test_bounded_estimates_in_unit_interval(small_data):
    specs = [EstimandSpec(k, RiskAt(t), TypeB(al)) for k in ("mu", "mu1", "mu0")
             for t in (0.2, 0.4) for al in (0.3, 0.6)]
    _, res = cross_fit(small_data, specs, 2, oracle_learners(DgpConfig()), Subsample(30, 0),
                       bounded=True, seed=2)
    for r in res:
        assert 0.0 <= r.point <= 1.0


def test_leave_one_cluster_out_runs():
    ds, _ = generate_dataset(DgpConfig(), 5, 10)
    spec = EstimandSpec("mu", RiskAt(0.3), TypeB(0.5))
    _, res = cross_fit(ds, [spec], K=10, learners=oracle_learners(DgpConfig()),
                       mode=Subsample(20, 0), bounded=True)
    assert np.isfinite(res[0].point) and np.isfinite(res[0].se)


def test_split_robust_median(small_data):
    specs = [EstimandSpec("mu", RiskAt(0.3), TypeB(0.5)), EstimandSpec("de", RMST(0.5), TypeB(0.5))]
    L = oracle_learners(DgpConfig())
    one, _ = sbs_estimate(small_data, specs, 2, 1, 20, L, seed=4, return_tables=True)
    table, ref = cross_fit(small_data, specs, 2, L, Subsample(20, 4), True, seed=4, split=0)
    for a, b in zip(one, ref):
        assert a.point == b.point and a.se == b.se
    five, tables = sbs_estimate(small_data, specs, 2, 5, 20, L, seed=4, return_tables=True)
    pts = np.stack([t.point() for t in tables])
    np.testing.assert_allclose([r.point for r in five], np.median(pts, axis=0), rtol=0, atol=0)


def test_cross_fit_deterministic(small_data):
    spec = [EstimandSpec("mu", RiskAt(0.3), TypeB(0.45))]
    a = cross_fit(small_data, spec, 2, seed=9, mode=Subsample(10, 9))[1][0]
    b = cross_fit(small_data, spec, 2, seed=9, mode=Subsample(10, 9))[1][0]
    assert a.point == b.point and a.se == b.se


def test_subsample_close_to_exact_on_small_clusters():
    cfg = DgpConfig(n_dist=UniformRange(2, 6))
    ds, _ = generate_dataset(cfg, 3, 30)
    spec = [EstimandSpec("mu", RiskAt(0.3), TypeB(0.4))]
    L = oracle_learners(cfg)
    ex = cross_fit(ds, spec, 2, L, Exact(), seed=1)[1][0].point
    sub = cross_fit(ds, spec, 2, L, Subsample(5000, 1), seed=1)[1][0].point
    assert abs(ex - sub) <= 0.005
