"""Partition functions of the oscillator in both descriptions.

Z_H integrates over (q, p).  Z_N integrates over (x, y, z) with a delta
function on the constraint, resolved onto the branches z = +/- sqrt(y^2 - x^2).
The ratio is a constant.  Its value depends on how many branches there are
and on how many (q, p) points land on each (x, y).
"""
import math

from hiddennambu.statmech import PartitionConfig, normalization_factor
from hiddennambu.systems import make_builtin

b = make_builtin("quadratic-triplet")
for beta in (0.5, 1.0, 2.0):
    for est in ("tensor-quadrature", "monte-carlo"):
        cfg = PartitionConfig(beta=beta, estimator=est, samples=1_000_000, seed=7)
        res = normalization_factor(b.nambu, b.branches, b.hamiltonian, cfg)
        print(f"beta={beta:3.1f} {est:17s} Z_N={res.z_nambu.value:.6f} "
              f"(pi/beta={math.pi / beta:.6f})  Z_H={res.z_hamiltonian.value:.6f}  "
              f"ratio={res.ratio:.4f} +/- {res.error:.1e}")
print("branches:", res.branch_count, " branches per chart preimage:", res.predicted_ratio)
