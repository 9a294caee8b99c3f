import math

import numpy as np
import pytest

from hiddennambu.brackets import Layout, poisson_bracket
from hiddennambu.dynamics import hamiltonian_rhs, nambu_rhs
from hiddennambu.fields import ScalarField, coordinate, gradient
from hiddennambu.systems import (
    ConstraintCheckError,
    DegenerateBlockError,
    GeneralizedNambuSystem,
    IrreducibleBlock,
    NonInvertibleChange,
    QuadraturePath,
    SingularIntegrand,
    VariableMap,
    construct_conjugate_coordinates,
    gauge_reduce_relativistic,
    make_builtin,
    metric_from_map,
    metric_pullback,
    relativistic_metric_c,
    solve_metric,
    verify_constraint_constancy,
    verify_generalized_conditions,
    verify_induced_constraints,
)


def test_quadratic_multiplet():
    b = make_builtin("quadratic-triplet")
    assert np.allclose(b.multiplet([1.0, 0.0]), [0.25, 0.25, 0.0])


def test_quadratic_constraint_vanishes(rng):
    b = make_builtin("quadratic-triplet")
    G = b.nambu.constraints[0]
    for c in rng.uniform(-3, 3, size=(50, 2)):
        assert abs(G(b.multiplet(c))) <= 1e-14


def test_relativistic_a_constraint_on_shell(rng):
    b = make_builtin("relativistic-a")
    red = b.reduction
    for P in rng.normal(size=(10, 3)):
        P0 = -math.sqrt(P @ P + 1.0)
        assert abs(red.psi([P0, *P])) <= 1e-14
        w = b.multiplet(np.ravel(np.column_stack([rng.normal(size=3), P])))
        assert abs(b.generalized.blocks[0].constraints[0](w)) <= 1e-14


def test_builtin_errors():
    with pytest.raises(ValueError, match="unknown"):
        make_builtin("nope")
    with pytest.raises(ValueError):
        make_builtin("harmonic-oscillator-triplet", mass=0.0)
    with pytest.raises(ValueError):
        make_builtin("harmonic-oscillator-triplet", omega=-1.0)
    with pytest.raises(ValueError):
        make_builtin("relativistic-b", m=-1.0)


def test_oscillator_triplet_matches_hamiltonian(rng):
    b = make_builtin("harmonic-oscillator-triplet", mass=1.7, omega=0.6, n=2)
    for c in rng.normal(size=(10, 4)):
        assert math.isclose(b.nambu.hamiltonian(b.multiplet(c)), b.hamiltonian.H(c),
                            rel_tol=1e-12, abs_tol=1e-12)


def test_induced_constraints_quadratic(rng):
    b = make_builtin("quadratic-triplet")
    pts = rng.uniform(-2, 2, size=(100, 2))
    assert verify_induced_constraints(b.varmap, b.nambu.constraints, pts) <= 1e-10


def test_induced_constraints_quartet(rng):
    b = make_builtin("quartet-ex-b")
    pts = rng.uniform(-2, 2, size=(20, 2))
    assert verify_induced_constraints(b.varmap, b.nambu.constraints, pts) <= 1e-8


def test_induced_constraints_negative_control(rng):
    b = make_builtin("quadratic-triplet")
    wrong = coordinate(3, 1)
    pts = rng.uniform(0.5, 2, size=(20, 2))
    assert verify_induced_constraints(b.varmap, [wrong], pts) >= 0.1


def test_induced_constraints_from_image_points(rng):
    b = make_builtin("quadratic-triplet")
    img = np.array([b.multiplet(c) for c in rng.uniform(0.2, 2, size=(10, 2))])
    assert verify_induced_constraints(b.varmap, b.nambu.constraints, img, points_in="image") <= 1e-10
    bare = VariableMap(1, b.varmap.components, b.varmap.layout)
    with pytest.raises(ConstraintCheckError, match="constraint check needs inverse or embedding"):
        verify_induced_constraints(bare, b.nambu.constraints, img, points_in="image")


def test_multiplet_nondegeneracy(rng):
    b = make_builtin("quadratic-triplet")
    for c in rng.uniform(0.2, 2, size=(10, 2)):
        assert b.varmap.is_nondegenerate(c)


def test_constancy_quadratic(rng):
    b = make_builtin("quadratic-triplet")
    probes = [coordinate(2, 0), coordinate(2, 1),
              ScalarField.autodiff(2, lambda w: w[0] * w[1]),
              ScalarField.autodiff(2, lambda w: w[0] ** 2)]
    pts = rng.uniform(-2, 2, size=(20, 2))
    assert verify_constraint_constancy(b.nambu.constraints[0], probes, b.varmap, pts) <= 1e-10


def test_constancy_quartet_and_self_probe(rng):
    b = make_builtin("quartet-ex-b")
    coefs = rng.normal(size=(3, 4))
    probes = [ScalarField.autodiff(2, lambda w, c=c: c[0] + c[1] * w[0] ** 2 + c[2] * w[0] * w[1] + c[3] * w[1] ** 3)
              for c in coefs]
    pts = rng.uniform(-2, 2, size=(20, 2))
    G1 = b.nambu.constraints[0]
    assert verify_constraint_constancy(G1, probes, b.varmap, pts) <= 1e-8
    # a non-constant function bracketed with itself
    u = probes[0]
    ctx = Layout.canonical(1)
    assert poisson_bracket(u, u, pts[0], ctx) == 0.0


def test_induced_conditions_imply_constancy(rng):
    # a candidate passing the first check also passes the second
    b = make_builtin("quartet-ex-b")
    pts = rng.uniform(-2, 2, size=(10, 2))
    assert verify_induced_constraints(b.varmap, b.nambu.constraints, pts) <= 1e-8
    probes = [ScalarField.autodiff(2, lambda w: w[0] ** 2 - w[1]), coordinate(2, 1)]
    for G in b.nambu.constraints:
        assert verify_constraint_constancy(G, probes, b.varmap, pts) <= 1e-7


def test_generalized_conditions_relativistic_a(rng):
    b = make_builtin("relativistic-a")
    res = verify_generalized_conditions(b.generalized, b.varmap, rng.normal(size=(20, 6)))
    assert res.max() <= 1e-10


def test_generalized_conditions_relativistic_c(rng):
    b = make_builtin("relativistic-c")
    res = verify_generalized_conditions(b.generalized, b.varmap, rng.normal(size=(20, 6)))
    assert res.max() <= 1e-8


def test_metric_of_construction_c_by_hand(rng):
    # {X_i, X_j} = (X_i Y_j - X_j Y_i) / (-Z^2) * dG/dZ with dG/dZ = 2Z
    b = make_builtin("relativistic-c")
    for c in rng.normal(size=(10, 6)):
        w = b.multiplet(c)
        X, Y, Z = w[:3], w[3:6], w[6]
        P = b.varmap.poisson_matrix(c)
        g = relativistic_metric_c(w)
        expect = -(np.outer(X, Y) - np.outer(Y, X)) / (Z * Z) * 2 * Z
        assert np.allclose(P[:3, :3], expect, atol=1e-10)
        assert np.allclose(g + g.T, 0.0)
        assert np.allclose(solve_metric(b.generalized, b.varmap, c), g, atol=1e-10)


def test_unconstrained_generalized_system(rng):
    # m = 0: metric built from half the Poisson brackets satisfies the conditions
    maps = (
        ScalarField.autodiff(2, lambda w: w[0] + w[1] ** 3),
        ScalarField.autodiff(2, lambda w: np.exp(0.2 * w[0]) * w[1]),
    )
    vmap = VariableMap.per_subsystem(maps, 1)
    samples = rng.uniform(-1, 1, size=(10, 2))
    for c in samples:
        g = 0.5 * vmap.poisson_matrix(c)
        gsys = GeneralizedNambuSystem(
            2, coordinate(2, 0), (IrreducibleBlock((0, 1), (), lambda w, g=g: g, ()),))
        assert verify_generalized_conditions(gsys, vmap, c).max() <= 1e-10


def test_degenerate_z_block():
    b = make_builtin("relativistic-b")
    flat = ScalarField.autodiff(7, lambda w: w[3] ** 2 + 0.0 * w[6])
    block = IrreducibleBlock(tuple(range(6)), (6,), b.generalized.blocks[0].metric, (flat,))
    gsys = GeneralizedNambuSystem(7, b.generalized.hamiltonian, (block,))
    with pytest.raises(DegenerateBlockError, match="degenerate z-block"):
        verify_generalized_conditions(gsys, b.varmap, np.ones(6))


def test_metric_pullback_identity_and_scaling():
    g = np.array([[0.0, 0.7], [-0.7, 0.0]])
    ident = [coordinate(2, 0), coordinate(2, 1)]
    assert np.array_equal(metric_pullback(g, ident, [0.3, 0.4]), g)
    double = [2.0 * coordinate(2, 0), 2.0 * coordinate(2, 1)]
    assert np.allclose(metric_pullback(g, double, [0.3, 0.4]), 4 * g)
    with pytest.raises(NonInvertibleChange, match="non-invertible change of variables"):
        metric_pullback(g, [coordinate(2, 0), 3.0 * coordinate(2, 0)], [0.3, 0.4])


def test_metric_pullback_matches_direct_brackets(rng):
    # x = (q + p^3, q p); x' = (x1 + sin x2, x2 exp(x1/5))
    maps = (ScalarField.autodiff(2, lambda w: w[0] + w[1] ** 3),
            ScalarField.autodiff(2, lambda w: w[0] * w[1]))
    change = (ScalarField.autodiff(2, lambda x: x[0] + np.sin(x[1])),
              ScalarField.autodiff(2, lambda x: x[1] * np.exp(0.2 * x[0])))
    vmap = VariableMap.per_subsystem(maps, 1)
    composed = VariableMap.per_subsystem(
        [ScalarField.autodiff(2, lambda w, f=f: f.func([maps[0].func(w), maps[1].func(w)]))
         for f in change], 1)
    for c in rng.uniform(-1, 1, size=(20, 2)):
        x = vmap.forward(c)
        g = 0.5 * vmap.poisson_matrix(c)
        direct = 0.5 * composed.poisson_matrix(c)
        assert np.max(np.abs(metric_pullback(g, change, x) - direct)) <= 1e-8


def test_metric_from_map_round_trip(rng):
    b = make_builtin("quadratic-triplet")
    m = metric_from_map(b.varmap)
    c = np.array([0.8, -0.3])
    assert np.allclose(m(b.multiplet(c)), 0.5 * b.varmap.poisson_matrix(c))


def test_conjugate_coordinate_unit_integrand(rng):
    # chart (Q, Z) with G = Z - 5: dG/dZ = 1 gives X = Q
    G = ScalarField.autodiff(2, lambda u: u[1] - 5.0)
    (X,) = construct_conjugate_coordinates([G], [1], [QuadraturePath(0, 0.0, -3, 3, 33)])
    for u in rng.uniform(-4, 4, size=(10, 2)):
        assert abs(X(u) - u[0]) <= 1e-10


def test_conjugate_coordinate_cubic():
    # dG/dZ = 3 Q^2 gives X = Q^3
    G = ScalarField.autodiff(2, lambda u: 3.0 * u[0] ** 2 * u[1])
    (X,) = construct_conjugate_coordinates([G], [1], [QuadraturePath(0, 0.0, -2, 2, 65)])
    for q in np.linspace(-1.9, 1.9, 23):
        assert abs(X([q, 0.4]) - q ** 3) <= 1e-9
    assert np.allclose(gradient(X, [1.2, 0.4]), [3 * 1.44, 0.0], atol=1e-6)


def test_conjugate_coordinates_relativistic_c(rng):
    # chart (Q1, Q2, Q3, Y1, Y2, Y3, Z) with G = Z^2 - Y^2 - 1
    G = ScalarField.autodiff(7, lambda u: u[6] ** 2 - u[3] ** 2 - u[4] ** 2 - u[5] ** 2 - 1.0)
    paths = [QuadraturePath(i, 0.0, -3, 3, 17) for i in range(3)]
    Xs = construct_conjugate_coordinates([G], [6], paths)
    for _ in range(10):
        Q = rng.uniform(-2.5, 2.5, 3)
        Y = rng.normal(size=3)
        Z = -math.sqrt(Y @ Y + 1.0)
        u = np.concatenate([Q, Y, [Z]])
        for i in range(3):
            assert abs(Xs[i](u) - 2 * Z * Q[i]) <= 1e-10


def test_conjugate_coordinate_singular():
    G = ScalarField.autodiff(2, lambda u: u[1] / u[0])
    (X,) = construct_conjugate_coordinates([G], [1], [QuadraturePath(0, 1.0, -1, 1, 5)])
    with pytest.raises(SingularIntegrand, match="singular integrand on path"):
        X([0.5, 1.0])


def test_gauge_reduction_rest_energy_and_velocity():
    red = gauge_reduce_relativistic(1.0, 1.0)
    assert red.energy(np.zeros(6)) == 1.0
    v = hamiltonian_rhs(red.hamiltonian, [0.0, 3.0, 0.0, 0.0, 0.0, 0.0])
    assert math.isclose(v[0], 3 / math.sqrt(10), rel_tol=1e-14)
    assert np.all(v[1::2] == 0.0)


def test_gauge_reduction_momenta_constant(rng):
    red = gauge_reduce_relativistic(2.0, 3.0)
    for c in rng.normal(size=(10, 6)):
        assert np.all(hamiltonian_rhs(red.hamiltonian, c)[1::2] == 0.0)


def test_gauge_condition_bracket(rng):
    # {phi, chi} with phi = p0^2 - p^2 - m^2c^2 and chi = q^0 is -2 p0 in the
    # convention {A, B} = dA/dq dB/dp - dA/dp dB/dq
    red = gauge_reduce_relativistic(1.0, 1.0)
    spec = red.constraint_spec
    for w in rng.normal(size=(10, 8)):
        assert math.isclose(spec.bracket_determinant(w), -2.0 * w[1], rel_tol=1e-12)


def test_positive_branch_is_available():
    red = gauge_reduce_relativistic(1.0, 1.0, branch=1)
    assert red.energy(np.zeros(6)) == -1.0


def test_gauge_terms_leave_flow_unchanged(rng):
    lam = ScalarField.autodiff(3, lambda w: 1.0 + w[0] * w[2] - w[1] ** 2)
    for name in ("quadratic-triplet", "graph-triplet"):
        b = make_builtin(name)
        gauged = b.nambu.with_gauge([lam])
        for c in rng.uniform(-1.5, 1.5, size=(20, 2)):
            w = b.multiplet(c)
            assert np.max(np.abs(nambu_rhs(gauged, w) - nambu_rhs(b.nambu, w))) <= 1e-9
    b = make_builtin("quartet-ex-b")
    lams = [ScalarField.autodiff(4, lambda w: w[0] * w[3]), ScalarField.autodiff(4, lambda w: 2.0 - w[1])]
    gauged = b.nambu.with_gauge(lams)
    for c in rng.uniform(-1.5, 1.5, size=(20, 2)):
        w = b.multiplet(c)
        assert np.max(np.abs(nambu_rhs(gauged, w) - nambu_rhs(b.nambu, w))) <= 1e-9
