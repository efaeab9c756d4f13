"""Compare estimates with oracle and learned nuisances against Monte Carlo truths for TPB policies.

    python demos/truth_vs_estimate.py
"""

from interfsurv.engine import sbs_estimate
from interfsurv.estimands import EstimandSpec, RiskAt
from interfsurv.nuisance.bundle import LearnerConfig, oracle_learners
from interfsurv.policies import TPB
from interfsurv.simulator import DgpConfig, generate_dataset, truth_samples

cfg = DgpConfig()
tau = RiskAt(0.2)
specs = [EstimandSpec(k, tau, TPB(rho)) for rho in (0.0, 0.25) for k in ("mu", "mu1", "mu0")]
specs.append(EstimandSpec("oe", tau, TPB(0.25), TPB(0.0)))

truth = truth_samples(cfg, specs, mc_clusters=50_000, seed=0).mean(axis=0)
ds, _ = generate_dataset(cfg, seed=7, m=400)
oracle = sbs_estimate(ds, specs, learners=oracle_learners(cfg), seed=7)
learned = sbs_estimate(ds, specs, learners=LearnerConfig(), seed=7)

print(f"{'estimand':36s} {'truth':>7s} {'oracle':>7s} {'learned':>8s} {'se':>6s}")
for s, t, o, l in zip(specs, truth, oracle, learned):
    print(f"{s.label:36s} {t:7.3f} {o.point:7.3f} {l.point:8.3f} {l.se:6.3f}")
