import math

import numpy as np
import pytest

from hiddennambu.dynamics import (
    DegenerateChart,
    IntegratorConfig,
    Trajectory,
    flow_volume_jacobian,
    generalized_nambu_rhs,
    hamiltonian_rhs,
    integrate,
    least_action_rhs,
    nambu_rhs,
    read_trajectory_csv,
    write_trajectory_csv,
)
from hiddennambu.fields import ScalarField, constant
from hiddennambu.systems import (
    GeneralizedNambuSystem,
    HamiltonianSystem,
    IrreducibleBlock,
    NambuSystem,
    make_builtin,
)
from hiddennambu.brackets import Layout


def oscillator():
    return HamiltonianSystem(1, ScalarField.autodiff(2, lambda w: 0.5 * (w[0] ** 2 + w[1] ** 2)))


def test_hamiltonian_rhs_examples():
    assert np.array_equal(hamiltonian_rhs(oscillator(), [1.0, 0.0]), [0.0, -1.0])
    free = HamiltonianSystem(1, ScalarField.autodiff(2, lambda w: 0.5 * w[1] ** 2))
    assert np.array_equal(hamiltonian_rhs(free, [7.0, 3.0]), [3.0, 0.0])


def test_nambu_rhs_quadratic_triplet():
    b = make_builtin("quadratic-triplet")
    assert np.allclose(nambu_rhs(b.nambu, [0.25, 0.25, 0.0]), [0.0, 0.0, -0.5], atol=1e-15)


def test_nambu_rhs_parallel_gradients():
    H = ScalarField.autodiff(3, lambda w: w[0] + 2 * w[1])
    G = ScalarField.autodiff(3, lambda w: 3 * w[0] + 6 * w[1])
    nsys = NambuSystem(H, (G,), Layout.multiplets(3))
    assert np.array_equal(nambu_rhs(nsys, [0.1, 0.2, 0.3]), np.zeros(3))


def test_nambu_pushforward_of_hamiltonian_flow(rng):
    # dx/dt from the Nambu form equals J(q,p) times the Hamiltonian velocity
    for name in ("quadratic-triplet", "quartet-ex-b", "graph-triplet"):
        b = make_builtin(name)
        for c in rng.uniform(-1.5, 1.5, size=(20, 2)):
            push = b.varmap.jacobian(c) @ hamiltonian_rhs(b.hamiltonian, c)
            assert np.allclose(nambu_rhs(b.nambu, b.multiplet(c)), push, atol=1e-10)


def test_relativistic_triplets_reduce_to_hamilton(rng):
    for name in ("relativistic-a", "relativistic-b"):
        b = make_builtin(name)
        for c in rng.normal(size=(20, 6)):
            v = nambu_rhs(b.nambu, b.multiplet(c))
            k = hamiltonian_rhs(b.hamiltonian, c)
            assert np.max(np.abs(v[:3] - k[0::2])) <= 1e-9
            assert np.max(np.abs(v[3:])) <= 1e-9


def test_generalized_matches_triplet_sum(rng):
    b = make_builtin("relativistic-a")
    for c in rng.normal(size=(20, 6)):
        w = b.multiplet(c)
        assert np.max(np.abs(generalized_nambu_rhs(b.generalized, w) - nambu_rhs(b.nambu, w))) <= 1e-12


def test_construction_c_velocities(rng):
    a = make_builtin("relativistic-a")
    cb = make_builtin("relativistic-c")
    for c in rng.normal(size=(20, 6)):
        va = generalized_nambu_rhs(a.generalized, a.multiplet(c))
        w = cb.multiplet(c)
        vc = generalized_nambu_rhs(cb.generalized, w)
        # X = 2 P0 Q with P0 constant along the flow
        assert np.max(np.abs(vc[:3] / (2 * w[6]) - va[:3])) <= 1e-8
        assert np.max(np.abs(vc[3:] - va[3:])) <= 1e-8


def test_generalized_without_constraints(rng):
    # metric = half the Poisson brackets of x = (q + p^3, q p)
    maps = (ScalarField.autodiff(2, lambda w: w[0] + w[1] ** 3),
            ScalarField.autodiff(2, lambda w: w[0] * w[1]))
    from hiddennambu.systems import VariableMap
    vmap = VariableMap.per_subsystem(maps, 1)
    H = HamiltonianSystem(1, ScalarField.autodiff(2, lambda w: 0.5 * w[0] ** 2 + w[1] ** 4))
    for c in rng.uniform(0.3, 1.2, size=(10, 2)):
        g = 0.5 * vmap.poisson_matrix(c)
        # gradient of H~ in x, pulled back through the invertible map at c
        Ht = ScalarField(2, lambda x: 0.0, lambda x, c=c: np.linalg.solve(
            vmap.jacobian(c).T, H.H.grad_func(c)))
        gsys = GeneralizedNambuSystem(2, Ht, (IrreducibleBlock((0, 1), (), lambda w, g=g: g, ()),))
        v = generalized_nambu_rhs(gsys, vmap.forward(c))
        push = vmap.jacobian(c) @ hamiltonian_rhs(H, c)
        assert np.max(np.abs(v - push)) <= 1e-9


def test_least_action_matches_nambu(rng):
    b = make_builtin("quadratic-triplet")
    H = b.nambu.hamiltonian
    assert np.allclose(least_action_rhs(b.varmap, H, [0.25, 0.25, 0.0]), [0.0, 0.0, -0.5])
    for c in rng.uniform(-2, 2, size=(100, 2)):
        w = b.multiplet(c)
        assert np.max(np.abs(least_action_rhs(b.varmap, H, w) - nambu_rhs(b.nambu, w))) <= 1e-8


def test_least_action_constant_hamiltonian():
    b = make_builtin("quadratic-triplet")
    w = b.multiplet([0.7, 0.4])
    assert np.array_equal(least_action_rhs(b.varmap, constant(3, 2.0), w), np.zeros(3))


def test_least_action_degenerate_chart():
    b = make_builtin("quadratic-triplet")
    with pytest.raises(DegenerateChart, match="fully degenerate chart"):
        least_action_rhs(b.varmap, b.nambu.hamiltonian, [0.0, 0.0, 0.0])


def test_oscillator_returns_after_period():
    sys = oscillator()
    dt = 2 * math.pi / 6284
    tr = integrate(lambda s: hamiltonian_rhs(sys, s), [1.0, 0.0], IntegratorConfig(dt=dt, steps=6284))
    assert np.max(np.abs(tr.final - [1.0, 0.0])) <= 1e-9


def test_zero_rhs_is_constant():
    tr = integrate(lambda s: np.zeros_like(s), [1.0, 2.0, 3.0], IntegratorConfig(dt=0.1, steps=10))
    assert np.all(tr.states == [1.0, 2.0, 3.0])


def test_triplet_flow_conserves_constraint():
    b = make_builtin("quadratic-triplet")
    G = b.nambu.constraints[0]
    tr = integrate(lambda s: nambu_rhs(b.nambu, s), [0.25, 0.25, 0.0],
                   IntegratorConfig(dt=1e-3, steps=10000), {"G": G.func})
    assert np.max(np.abs(tr.diagnostics["G"])) <= 1e-8


def test_rk4_order():
    sys = oscillator()
    rhs = lambda s: hamiltonian_rhs(sys, s)

    def err(dt):
        tr = integrate(rhs, [1.0, 0.0], IntegratorConfig.span(2.0, dt))
        return np.max(np.abs(tr.final - [math.cos(2.0), -math.sin(2.0)]))

    assert 12 <= err(0.1) / err(0.05) <= 20


def test_euler_is_first_order():
    sys = oscillator()
    rhs = lambda s: hamiltonian_rhs(sys, s)

    def err(dt):
        tr = integrate(rhs, [1.0, 0.0], IntegratorConfig.span(1.0, dt, method="explicit-euler"))
        return np.max(np.abs(tr.final - [math.cos(1.0), -math.sin(1.0)]))

    assert 1.8 <= err(0.01) / err(0.005) <= 2.2


def test_non_finite_state_truncates():
    tr = integrate(lambda s: s ** 2, [1.0], IntegratorConfig(dt=0.1, steps=200))
    assert tr.error is not None
    assert tr.last_good == len(tr.times) - 1
    assert np.all(np.isfinite(tr.states))


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(steps=0)
    with pytest.raises(ValueError):
        IntegratorConfig(method="leapfrog")


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        Trajectory([0.0, 1.0], np.zeros((3, 1)))


def test_volume_oscillator_and_decay():
    sys = oscillator()
    cfg = IntegratorConfig(dt=1e-2, variational=True)
    assert abs(flow_volume_jacobian(lambda s: hamiltonian_rhs(sys, s), [1.0, 0.0], 10.0, cfg) - 1) <= 1e-8
    assert abs(flow_volume_jacobian(lambda s: -s, [1.0], 1.0, cfg) - math.exp(-1)) <= 1e-6
    with pytest.raises(ValueError):
        flow_volume_jacobian(lambda s: -s, [1.0], 1.0, IntegratorConfig())


def test_generalized_flow_reports_volume(rng):
    b = make_builtin("relativistic-c")
    w = b.multiplet(rng.normal(size=6))
    tr = integrate(lambda s: generalized_nambu_rhs(b.generalized, s), w,
                   IntegratorConfig(dt=1e-2, steps=20, variational=True))
    assert np.all(np.isfinite(tr.diagnostics["volume"]))


def test_csv_round_trip(tmp_path):
    b = make_builtin("quadratic-triplet")
    tr = integrate(lambda s: nambu_rhs(b.nambu, s), [0.25, 0.25, 0.0],
                   IntegratorConfig(dt=1e-2, steps=50), {"G": b.nambu.constraints[0].func})
    path = tmp_path / "t.csv"
    write_trajectory_csv(tr, path, ["x", "y", "z"])
    back, names = read_trajectory_csv(path, 3)
    assert names == ["x", "y", "z"]
    assert np.array_equal(back.states, tr.states)
    assert np.array_equal(back.times, tr.times)
    assert np.array_equal(back.diagnostics["G"], tr.diagnostics["G"])
