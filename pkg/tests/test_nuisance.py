
import numpy as np
import pytest
from scipy import integrate, special, stats

from interfsurv.data import build_time_grid, dataset_from_arrays
from interfsurv.errors import NoEventsWarning, SeparationDetected, SeparationWarning
from interfsurv.nuisance.base import ExposureQuery
from interfsurv.nuisance.forest import fit_survival_forest
from interfsurv.nuisance.oracle import OracleGamma, OraclePropensity
from interfsurv.nuisance.pooled import fit_pooled_logistic
from interfsurv.nuisance.propensity import fit_logistic_propensity
from interfsurv.simulator import DgpConfig, generate_dataset
from interfsurv.special import gamma_cdf


def _random_clusters(rng, m, n, a_prob, t=None, d=None):
    ids = np.repeat([f"g{i:03d}" for i in range(m)], n)
    N = m * n
    x = rng.normal(size=(N, 3))
    a = (rng.random(N) < a_prob).astype(int)
    t = rng.exponential(size=N) if t is None else t
    d = np.ones(N, dtype=int) if d is None else d
    return dataset_from_arrays(ids, t, d, a, x)


def test_propensity_recovers_constant_rate(rng):
    train = _random_clusters(rng, 500, 10, 0.4)
    test = _random_clusters(rng, 50, 10, 0.4)
    model = fit_logistic_propensity(train, seed=0)
    pi = np.concatenate([model.allocation(c.x).marginals for c in test.clusters])
    assert abs(pi.mean() - 0.4) <= 0.02
    assert np.sqrt(np.mean((pi - 0.4) ** 2)) <= 0.02


def test_propensity_single_cluster_and_separation(rng):
    one = _random_clusters(rng, 1, 8, 0.5)
    model = fit_logistic_propensity(one)
    assert np.all(np.isfinite(model.allocation(one.clusters[0].x).marginals))
    allt = _random_clusters(rng, 10, 4, 1.1)
    with pytest.warns(SeparationWarning):
        m2 = fit_logistic_propensity(allt)
    assert np.allclose(m2.allocation(allt.clusters[0].x).marginals, 0.99)
    with pytest.raises(SeparationDetected):
        fit_logistic_propensity(allt, fallback=False)


def test_oracle_propensity_matches_quadrature():
    cfg = DgpConfig()
    ds, _ = generate_dataset(cfg, 2, 3)
    x = ds.clusters[0].x
    got = OraclePropensity(cfg, n_nodes=40).allocation(x).marginals
    sd = np.sqrt(0.5)
    for j in range(x.shape[0]):
        lin = (-0.1 - 0.2 * x[j, 0] + 0.2 * x[j, 1] ** 2 + 0.1 * (x[j, 0] > 0) * x[j, 5]
               - 0.3 * max(x[j, 10], 0.5))
        want = integrate.quad(lambda b: stats.norm.cdf(lin + b) * stats.norm.pdf(b, 0, sd),
                              -10, 10)[0]
        assert got[j] == pytest.approx(want, abs=1e-9)


def test_oracle_event_cdf_is_gamma():
    cfg = DgpConfig()
    ds, _ = generate_dataset(cfg, 4, 2)
    q = ExposureQuery.observed(ds.flat)
    model = OracleGamma(cfg, "event")
    r = np.array([0.1, 0.5, 2.0, 7.0])
    np.testing.assert_allclose(model.cdf(q, r), special.gammainc(model.shape(q)[:, None], r / 2.0),
                               atol=1e-10)


def test_gamma_cdf_against_scipy(rng):
    a = rng.uniform(0.05, 30, 500)
    t = rng.uniform(0, 60, 500)
    np.testing.assert_allclose(gamma_cdf(t, a, 2.0), special.gammainc(a, t / 2.0), atol=1e-10)


@pytest.mark.parametrize("learner", ["forest", "pooled"])
def test_no_censoring_gives_unit_censoring_survival(rng, learner):
    ds = _random_clusters(rng, 30, 5, 0.5)
    grid = build_time_grid(ds)
    with pytest.warns(NoEventsWarning):
        if learner == "forest":
            model = fit_survival_forest(ds, "censoring", grid)
        else:
            model = fit_pooled_logistic(ds, "censoring", grid)
    s = model.grid_survival(ExposureQuery.observed(ds.flat))
    assert np.all(s == 1.0)


def test_pooled_logistic_flat_hazard(rng):
    m, n = 400, 10
    t = rng.geometric(0.1, size=m * n).astype(float)
    d = (t <= 15).astype(int)
    t = np.where(d == 1, t, 15.5)       # censored after the last event time
    ds = _random_clusters(rng, m, n, 0.5, t, d)
    grid = build_time_grid(ds)
    model = fit_pooled_logistic(ds, "event", grid, seed=0)
    h = model.grid_hazards(ExposureQuery.observed(ds.flat))
    assert np.all(np.abs(h[:, :15].mean(axis=0) - 0.1) <= 0.02)


def test_forest_is_deterministic_and_monotone():
    ds, _ = generate_dataset(DgpConfig(), 8, 60)
    grid = build_time_grid(ds)
    q = ExposureQuery.observed(ds.flat)
    s1 = fit_survival_forest(ds, "event", grid, seed=3, n_trees=20).grid_survival(q)
    s2 = fit_survival_forest(ds, "event", grid, seed=3, n_trees=20).grid_survival(q)
    np.testing.assert_array_equal(s1, s2)
    assert np.all(np.diff(s1, axis=1) <= 1e-15)
    assert np.all((s1 >= 0) & (s1 <= 1))


def test_forest_tracks_oracle_risk():
    cfg = DgpConfig()
    ds, _ = generate_dataset(cfg, 12, 200)
    grid = build_time_grid(ds)
    forest = fit_survival_forest(ds, "event", grid, seed=0)
    q = ExposureQuery.observed(ds.flat)
    from interfsurv.estimands import RiskAt
    est = forest.risk_mean(q, RiskAt(0.4))
    true = OracleGamma(cfg).risk_mean(q, RiskAt(0.4))
    assert abs(est.mean() - true.mean()) < 0.03
    assert np.corrcoef(est, true)[0, 1] > 0.6
