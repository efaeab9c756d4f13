"""On a tiny enumerable world, the estimand computed from potential outcomes equals
the exact expectation of the estimating function with true nuisances.

    python demos/exact_world.py
"""

import numpy as np

from interfsurv.bruteforce import brute_force_psi, random_world
from interfsurv.estimands import EstimandSpec, RiskAt
from interfsurv.policies import CIPS, TPB, TypeB

rng = np.random.default_rng(3)
world = random_world(rng)
tau = RiskAt(float(world.support[1]))
print("support points:", world.support, " P(N = 1, 2, 3):", np.round(world.size_pmf, 3))
for pol in (TypeB(0.4), CIPS(2.0), TPB(0.5)):
    specs = [EstimandSpec(k, tau, pol) for k in ("mu", "mu1", "mu0", "de")]
    psi, ephi = brute_force_psi(world, specs)
    for s, a, b in zip(specs, psi, ephi):
        print(f"{s.label:30s} enumerated {a:.12f}   E[phi] {b:.12f}   diff {abs(a - b):.1e}")
