"""Adding one more redundant variable to a Nambu triplet.

With y4 = x^2 + z^2 and the candidate G = y4 - y1^2 - y3^2 the triplet
becomes a quartet whose flow projects back onto the original one.
"""
import numpy as np

from hiddennambu.dynamics import IntegratorConfig, integrate, nambu_rhs
from hiddennambu.embedding import graph_lift, lift_nambu_system, verify_lift_conditions
from hiddennambu.fields import ScalarField
from hiddennambu.systems import make_builtin

src = make_builtin("quadratic-triplet").nambu
spec = graph_lift(src, [ScalarField.autodiff(3, lambda x: x[0] ** 2 + x[2] ** 2)])
print("lift condition residual:", verify_lift_conditions(spec, np.random.default_rng(2).normal(size=(20, 3))))

quartet = lift_nambu_system(spec)
x0 = np.array([0.25, 0.25, 0.0])
cfg = IntegratorConfig(dt=1e-3, steps=5000)
a = integrate(lambda s: nambu_rhs(src, s), x0, cfg)
b = integrate(lambda s: nambu_rhs(quartet, s), spec.lift_point(x0), cfg)
print(f"projection error: {np.max(np.abs(b.states[:, :3] - a.states)):.1e}")
