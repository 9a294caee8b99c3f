"""Hamiltonian, Nambu and generalized Nambu systems.

This module holds the system containers, the variable maps that carry a
canonical chart ``(q_1, p_1, ..., q_n, p_n)`` into a redundant multiplet
space, the residual checks for induced constraints, and the built-in example
gallery (:func:`make_builtin`).

Residual checks return magnitudes; tolerance decisions belong to callers.
"""

from collections import OrderedDict
from dataclasses import dataclass, field, replace
import math
import threading
import warnings
from typing import Callable, Optional

import numpy as np
from scipy import integrate, interpolate

from .brackets import Layout, block_bracket, poisson_bracket
from .fields import (
    ScalarField,
    compose,
    coordinate,
    determinant,
    embed,
    jacobian_matrix,
    permutation_sign,
)

__all__ = [
    "ConstraintCheckError",
    "DegenerateBlockError",
    "NonInvertibleChange",
    "SingularIntegrand",
    "HamiltonianSystem",
    "VariableMap",
    "NambuSystem",
    "IrreducibleBlock",
    "GeneralizedNambuSystem",
    "GeneralizedResiduals",
    "ConstraintSpec",
    "Bundle",
    "BUILTINS",
    "make_builtin",
    "verify_induced_constraints",
    "verify_constraint_constancy",
    "verify_generalized_conditions",
    "solve_metric",
    "metric_pullback",
    "metric_from_map",
    "QuadraturePath",
    "construct_conjugate_coordinates",
    "RelativisticReduction",
    "gauge_reduce_relativistic",
]


class ConstraintCheckError(ValueError):
    pass


class DegenerateBlockError(ValueError):
    pass


class NonInvertibleChange(ValueError):
    pass


class SingularIntegrand(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HamiltonianSystem:
    n: int
    H: ScalarField

    def __post_init__(self):
        if self.H.dim != 2 * self.n:
            raise ValueError("Hamiltonian dimension must be 2n")

    @property
    def layout(self):
        return Layout.canonical(self.n)


@dataclass(frozen=True)
class VariableMap:
    """Redundant coordinates ``w_i(q, p)`` on a canonical chart of n doublets.

    ``components`` are fields on the 2n-dimensional chart.  ``layout`` groups
    the image coordinates into Nambu multiplets.  ``inverse`` maps an image
    point back to the chart on one fixed branch; it is only a hint, since
    redundant coordinates rarely determine ``(q, p)`` uniquely.
    """

    n: int
    components: tuple
    layout: Optional[Layout] = None
    inverse: Optional[Callable] = None

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        for f in comps:
            if f.dim != 2 * self.n:
                raise ValueError("map components must live on the 2n chart")
        if self.layout is not None and self.layout.dim != len(comps):
            raise ValueError("layout does not match the number of components")

    @classmethod
    def per_subsystem(cls, maps, n=1, inverse=None):
        """Apply the same N maps of ``(q, p)`` to each of n doublets.

        ``inverse`` (optional) inverts one multiplet to one doublet.
        """
        maps = tuple(maps)
        N = len(maps)
        comps = tuple(embed(f, (2 * k, 2 * k + 1), 2 * n)
                      for k in range(n) for f in maps)
        if inverse is None:
            return cls(n, comps, Layout.multiplets(N, n))

        def inv(w):
            w = np.asarray(w, dtype=float)
            parts = [np.asarray(inverse(w[N * k:N * (k + 1)]), dtype=float)
                     for k in range(n)]
            return np.concatenate(parts)
        return cls(n, comps, Layout.multiplets(N, n), inv)

    @property
    def dim(self):
        return len(self.components)

    @property
    def chart_layout(self):
        return Layout.canonical(self.n)

    def forward(self, chart):
        chart = np.asarray(chart, dtype=float)
        return np.array([f.func(chart) for f in self.components], dtype=float)

    def __call__(self, chart):
        return self.forward(chart)

    def jacobian(self, chart):
        return jacobian_matrix(self.components, chart)

    def pullback(self, field):
        """``field`` on the image space, as a field on the chart."""
        return compose(field, self.components)

    def poisson_matrix(self, chart):
        """``{w_a, w_b}_PB`` for all pairs of image coordinates."""
        grads = self.jacobian(chart)
        ctx = self.chart_layout
        d = self.dim
        out = np.zeros((d, d))
        for a in range(d):
            for b in range(a + 1, d):
                v = block_bracket(grads[[a, b]], ctx)
                out[a, b] = v
                out[b, a] = -v
        return out

    def to_chart(self, w):
        if self.inverse is None:
            raise ConstraintCheckError(
                "constraint check needs inverse or embedding")
        return np.asarray(self.inverse(np.asarray(w, dtype=float)), dtype=float)

    def nonvanishing_brackets(self, chart, tol=1e-10):
        """Per multiplet, the number of pairs with ``|{w_i, w_j}| > tol``."""
        P = self.poisson_matrix(chart)
        layout = self.layout or Layout.multiplets(self.dim)
        counts = []
        for b in layout.blocks:
            counts.append(sum(abs(P[i, j]) > tol
                              for k, i in enumerate(b) for j in b[k + 1:]))
        return counts

    def is_nondegenerate(self, chart, tol=1e-10):
        """At least N-1 nonvanishing pairwise brackets in every multiplet."""
        layout = self.layout or Layout.multiplets(self.dim)
        return all(c >= len(b) - 1 for c, b in
                   zip(self.nonvanishing_brackets(chart, tol), layout.blocks))


@dataclass(frozen=True)
class NambuSystem:
    """Multiplet phase space evolved by ``df/dt = {f, H, G_1, ..., G_{N-2}}``.

    ``constraints`` are fields on the whole multiplet space.  With several
    multiplets each constraint is the sum of the per-multiplet constraints.
    ``gauge_terms`` are multipliers ``lambda_b``; the evolution uses
    ``H + sum_b lambda_b G_b``, which must not change the flow on the
    constraint surface.
    """

    hamiltonian: ScalarField
    constraints: tuple
    layout: Layout
    gauge_terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "gauge_terms", tuple(self.gauge_terms))
        self.layout.require_nambu()
        if len(self.constraints) != self.layout.arity - 2:
            raise ValueError(
                f"arity {self.layout.arity} needs {self.layout.arity - 2} constraints")
        for f in (self.hamiltonian,) + self.constraints + self.gauge_terms:
            if f.dim != self.layout.dim:
                raise ValueError("field dimension does not match the layout")
        if self.gauge_terms and len(self.gauge_terms) != len(self.constraints):
            raise ValueError("one gauge multiplier per constraint")

    @property
    def dim(self):
        return self.layout.dim

    @property
    def arity(self):
        return self.layout.arity

    @property
    def effective_hamiltonian(self):
        H = self.hamiltonian
        for lam, G in zip(self.gauge_terms, self.constraints):
            H = H + lam * G
        return H

    @property
    def hamiltonians(self):
        return (self.effective_hamiltonian,) + self.constraints

    def with_gauge(self, multipliers):
        return replace(self, gauge_terms=tuple(multipliers))


@dataclass(frozen=True)
class IrreducibleBlock:
    """One irreducible set: x-indices, z-indices, metric and constraints.

    ``metric`` maps an image point to the ``len(x) x len(x)`` antisymmetric
    factor; ``constraints`` are ``len(z)`` fields on the whole image space.
    """

    x: tuple
    z: tuple
    metric: Callable
    constraints: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(int(i) for i in self.x))
        object.__setattr__(self, "z", tuple(int(i) for i in self.z))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if len(self.constraints) != len(self.z):
            raise ValueError("one constraint per z-coordinate")


@dataclass(frozen=True)
class GeneralizedNambuSystem:
    """Evolution ``df/dt = sum_ab g_ab d(f, H, G_1..G_m)/d(x_a, x_b, z_1..z_m)``.

    Summed over irreducible blocks when there are several.
    """

    dim: int
    hamiltonian: ScalarField
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.hamiltonian.dim != self.dim:
            raise ValueError("Hamiltonian dimension mismatch")
        for b in self.blocks:
            for i in b.x + b.z:
                if not 0 <= i < self.dim:
                    raise ValueError("block index out of range")

    def metric_antisymmetry(self, w):
        """Max ``|g_ab + g_ba|`` over blocks at one image point."""
        out = 0.0
        for b in self.blocks:
            g = np.asarray(b.metric(np.asarray(w, dtype=float)), dtype=float)
            out = max(out, float(np.max(np.abs(g + g.T))))
        return out


@dataclass(frozen=True)
class ConstraintSpec:
    """First class constraints ``phi_s`` and gauge conditions ``chi_t``."""

    phi: tuple
    chi: tuple
    ctx: Layout

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(self.phi))
        object.__setattr__(self, "chi", tuple(self.chi))
        if len(self.phi) != len(self.chi):
            raise ValueError("need as many gauge conditions as constraints")

    def bracket_matrix(self, at):
        return np.array([[poisson_bracket(p, c, at, self.ctx) for c in self.chi]
                         for p in self.phi])

    def bracket_determinant(self, at):
        return determinant(self.bracket_matrix(at))


@dataclass(frozen=True)
class Bundle:
    """Everything a built-in example provides."""

    name: str
    hamiltonian: HamiltonianSystem
    varmap: VariableMap
    nambu: Optional[NambuSystem] = None
    generalized: Optional[GeneralizedNambuSystem] = None
    branches: Optional[object] = None
    constraint_spec: Optional[ConstraintSpec] = None
    reduction: Optional[object] = None
    params: dict = field(default_factory=dict)

    def multiplet(self, chart):
        return self.varmap.forward(chart)


# ---------------------------------------------------------------------------
# built-in gallery
# ---------------------------------------------------------------------------

def _positive(params, key, default):
    v = float(params.get(key, default))
    if not v > 0:
        raise ValueError(f"{key} must be positive, got {v}")
    return v


def _quadratic_maps():
    x = ScalarField.autodiff(2, lambda w: 0.25 * (w[0] ** 2 - w[1] ** 2), "x")
    y = ScalarField.autodiff(2, lambda w: 0.25 * (w[0] ** 2 + w[1] ** 2), "y")
    z = ScalarField.autodiff(2, lambda w: 0.5 * w[0] * w[1], "z")
    return x, y, z


def _quadratic_inverse(w):
    # branch q >= 0
    x, y, z = w[0], w[1], w[2]
    q = np.sqrt(np.maximum(2.0 * (x + y), 0.0))
    p = np.where(q > 1e-12, 2.0 * z / np.where(q > 1e-12, q, 1.0),
                 np.sqrt(np.maximum(2.0 * (y - x), 0.0)))
    return np.array([q, p])


def _triplet_constraint(n):
    def G(w):
        total = 0.0
        for k in range(n):
            x, y, z = w[3 * k], w[3 * k + 1], w[3 * k + 2]
            total = total + 0.5 * (x * x - y * y + z * z)
        return total
    return ScalarField.autodiff(3 * n, G, "G")


def _oscillator_triplet(name, mass, omega, n):
    from .statmech import quadratic_triplet_branches

    maps = _quadratic_maps()
    vmap = VariableMap.per_subsystem(maps, n, _quadratic_inverse)

    def H(w):
        total = 0.0
        for k in range(n):
            q, p = w[2 * k], w[2 * k + 1]
            total = total + p * p / (2.0 * mass) + 0.5 * mass * omega ** 2 * q * q
        return total

    def Ht(w):
        total = 0.0
        for k in range(n):
            x, y = w[3 * k], w[3 * k + 1]
            total = total + (y - x) / mass + mass * omega ** 2 * (y + x)
        return total

    ham = HamiltonianSystem(n, ScalarField.autodiff(2 * n, H, "H"))
    nsys = NambuSystem(ScalarField.autodiff(3 * n, Ht, "H~"),
                       (_triplet_constraint(n),), vmap.layout)
    return Bundle(name, ham, vmap, nambu=nsys,
                  branches=quadratic_triplet_branches(n),
                  params={"mass": mass, "omega": omega, "n": n})


def _quartet_ex_b():
    maps = (
        ScalarField.autodiff(2, lambda w: w[0], "x1"),
        ScalarField.autodiff(2, lambda w: w[1], "x2"),
        ScalarField.autodiff(2, lambda w: w[0] * w[0] * w[1], "x3"),
        ScalarField.autodiff(2, lambda w: w[1] ** 3 - w[0], "x4"),
    )
    vmap = VariableMap.per_subsystem(maps, 1, lambda w: np.array([w[0], w[1]]))
    ham = HamiltonianSystem(1, ScalarField.autodiff(
        2, lambda w: 0.5 * (w[0] ** 2 + w[1] ** 2), "H"))
    Ht = ScalarField.autodiff(4, lambda w: 0.5 * (w[0] ** 2 + w[1] ** 2), "H~")
    G1 = ScalarField.autodiff(4, lambda w: w[2] - w[0] * w[0] * w[1], "G1")
    G2 = ScalarField.autodiff(4, lambda w: w[3] - (w[1] ** 3 - w[0]), "G2")
    nsys = NambuSystem(Ht, (G1, G2), vmap.layout)
    return Bundle("quartet-ex-b", ham, vmap, nambu=nsys)


def _graph_triplet():
    from .statmech import graph_triplet_branches

    maps = (
        ScalarField.autodiff(2, lambda w: w[0], "x"),
        ScalarField.autodiff(2, lambda w: w[1], "y"),
        ScalarField.autodiff(2, lambda w: w[0] * w[1], "z"),
    )
    vmap = VariableMap.per_subsystem(maps, 1, lambda w: np.array([w[0], w[1]]))
    ham = HamiltonianSystem(1, ScalarField.autodiff(
        2, lambda w: 0.5 * (w[0] ** 2 + w[1] ** 2), "H"))
    Ht = ScalarField.autodiff(3, lambda w: 0.5 * (w[0] ** 2 + w[1] ** 2), "H~")
    G = ScalarField.autodiff(3, lambda w: w[2] - w[0] * w[1], "G")
    nsys = NambuSystem(Ht, (G,), vmap.layout)
    return Bundle("graph-triplet", ham, vmap, nambu=nsys,
                  branches=graph_triplet_branches(lambda x, y: x * y))


# image layout shared by the relativistic constructions: (X1, X2, X3, Y1, Y2, Y3, Z)
_REL_TRIPLETS = Layout(((0, 3, 6), (1, 4, 6), (2, 5, 6)), 7)


def _rel_half_metric(w):
    g = np.zeros((6, 6))
    for i in range(3):
        g[i, i + 3] = 0.5
        g[i + 3, i] = -0.5
    return g


def relativistic_metric_c(w):
    """Metric factor of the ``X_i = 2 P_0 Q^i`` construction."""
    w = np.asarray(w, dtype=float)
    X, Y, Z = w[:3], w[3:6], w[6]
    g = _rel_half_metric(w)
    g[:3, :3] = -(np.outer(X, Y) - np.outer(Y, X)) / (2.0 * Z * Z)
    return g


def _relativistic(name, m, c, branch):
    red = gauge_reduce_relativistic(m, c, branch)
    s = red.branch
    mc2 = (m * c) ** 2

    def Q(i):
        return lambda w: w[2 * i]

    def P(i):
        return lambda w: w[2 * i + 1]

    def p0(w):
        return s * np.sqrt(w[1] ** 2 + w[3] ** 2 + w[5] ** 2 + mc2)

    ys = [ScalarField.autodiff(6, P(i), f"Y{i + 1}") for i in range(3)]
    construction = name[-1]
    if construction == "c":
        xs = [ScalarField.autodiff(6, (lambda i: lambda w: 2.0 * p0(w) * w[2 * i])(i),
                                   f"X{i + 1}") for i in range(3)]
    else:
        xs = [ScalarField.autodiff(6, Q(i), f"X{i + 1}") for i in range(3)]
    if construction == "b":
        zf = ScalarField.autodiff(6, lambda w: p0(w) ** 2, "Z")
    else:
        zf = ScalarField.autodiff(6, p0, "Z")

    def inverse(w):
        w = np.asarray(w, dtype=float)
        X, Y, Z = w[:3], w[3:6], w[6]
        q = X / (2.0 * Z) if construction == "c" else X
        out = np.empty((6,) + w.shape[1:])
        out[0::2] = q
        out[1::2] = Y
        return out

    vmap = VariableMap(3, tuple(xs + ys + [zf]), _REL_TRIPLETS, inverse)

    def ysq(w):
        return w[3] ** 2 + w[4] ** 2 + w[5] ** 2

    if construction == "a":
        Ht = ScalarField.autodiff(7, lambda w: -c * w[6], "H~")
        G = ScalarField.autodiff(7, lambda w: w[6] - s * np.sqrt(ysq(w) + mc2), "Psi")
        metric = _rel_half_metric
    elif construction == "b":
        Ht = ScalarField.autodiff(7, lambda w: -c * s * np.sqrt(w[6]), "H~")
        G = ScalarField.autodiff(7, lambda w: w[6] - ysq(w) - mc2, "Phi")
        metric = _rel_half_metric
    else:
        Ht = ScalarField.autodiff(7, lambda w: -c * w[6], "H~")
        G = ScalarField.autodiff(7, lambda w: w[6] ** 2 - ysq(w) - mc2, "Phi")
        metric = relativistic_metric_c

    gsys = GeneralizedNambuSystem(
        7, Ht, (IrreducibleBlock(tuple(range(6)), (6,), metric, (G,)),))
    nsys = None
    if construction in "ab":
        nsys = NambuSystem(Ht, (G,), _REL_TRIPLETS)
    return Bundle(name, red.hamiltonian, vmap, nambu=nsys, generalized=gsys,
                  constraint_spec=red.constraint_spec, reduction=red,
                  params={"m": m, "c": c, "branch": s})


BUILTINS = (
    "quadratic-triplet",
    "harmonic-oscillator-triplet",
    "quartet-ex-b",
    "graph-triplet",
    "relativistic-a",
    "relativistic-b",
    "relativistic-c",
)


def make_builtin(name, **params):
    """Build one of the example systems with exact gradients.

    ``quadratic-triplet``
        ``x = (q^2 - p^2)/4, y = (q^2 + p^2)/4, z = qp/2`` with
        ``H = (q^2 + p^2)/2`` (so ``H~ = 2y``) and ``G~ = (x^2 - y^2 + z^2)/2``.
    ``harmonic-oscillator-triplet``
        the same map on ``n`` independent oscillators with ``mass`` and
        ``omega``.
    ``quartet-ex-b``
        ``(q, p, q^2 p, p^3 - q)`` with two graph constraints.
    ``graph-triplet``
        ``(q, p, qp)`` with the single-branch constraint ``z - xy``.
    ``relativistic-a``, ``relativistic-b``, ``relativistic-c``
        the gauge-fixed free particle in three redundant descriptions;
        parameters ``m``, ``c`` and ``branch`` (sign of ``P_0``, default -1).
    """
    if name == "quadratic-triplet":
        return replace(_oscillator_triplet(name, 1.0, 1.0, 1), params={})
    if name == "harmonic-oscillator-triplet":
        n = int(params.get("n", 1))
        if n < 1:
            raise ValueError("n must be a positive integer")
        return _oscillator_triplet(name, _positive(params, "mass", 1.0),
                                   _positive(params, "omega", 1.0), n)
    if name == "quartet-ex-b":
        return _quartet_ex_b()
    if name == "graph-triplet":
        return _graph_triplet()
    if name in ("relativistic-a", "relativistic-b", "relativistic-c"):
        return _relativistic(name, _positive(params, "m", 1.0),
                             _positive(params, "c", 1.0),
                             int(params.get("branch", -1)))
    raise ValueError(f"unknown built-in system {name!r}")


# ---------------------------------------------------------------------------
# induced-constraint checks
# ---------------------------------------------------------------------------

def _chart_points(vmap, points, points_in):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if points_in == "chart":
        return pts
    if points_in == "image":
        return np.array([vmap.to_chart(w) for w in pts])
    raise ValueError("points_in must be 'chart' or 'image'")


def verify_induced_constraints(vmap, G, points, points_in="chart"):
    """Max residual of the conditions linking ``G~_b`` to ``{x_i, x_j}_PB``.

    For every multiplet and every pair ``(i1, i2)`` inside it, compares
    ``1/(N-2)! sum eps_{i1 i2 i3..iN} d(G_1..G_{N-2})/d(x_i3..x_iN)`` with
    ``{x_i1, x_i2}_PB``.  The antisymmetric sum reduces to one signed minor
    per pair.  ``points`` are chart points, or image points when
    ``points_in="image"`` (which needs ``vmap.inverse``).
    """
    G = tuple(G)
    layout = vmap.layout or Layout.multiplets(vmap.dim)
    N = layout.arity
    if N is None or len(G) != N - 2:
        raise ValueError(f"need N-2 = {None if N is None else N - 2} constraint fields")
    worst = 0.0
    for c in _chart_points(vmap, points, points_in):
        w = vmap.forward(c)
        P = vmap.poisson_matrix(c)
        gG = jacobian_matrix(G, w) if G else np.zeros((0, vmap.dim))
        for block in layout.blocks:
            for a in range(N):
                for b in range(a + 1, N):
                    rest = [k for k in range(N) if k not in (a, b)]
                    sign = permutation_sign([a, b] + rest)
                    minor = determinant(gG[:, [block[k] for k in rest]]) if G else 1.0
                    worst = max(worst, abs(sign * minor - P[block[a], block[b]]))
    return worst


def verify_constraint_constancy(G, probes, vmap, points):
    """Max ``|{G, u}_PB|`` of the pulled-back constraint against each probe."""
    probes = tuple(probes)
    if not probes:
        raise ValueError("at least one probe is required")
    Gq = vmap.pullback(G)
    ctx = vmap.chart_layout
    worst = 0.0
    for c in np.atleast_2d(np.asarray(points, dtype=float)):
        for u in probes:
            worst = max(worst, abs(poisson_bracket(Gq, u, c, ctx)))
    return worst


@dataclass(frozen=True)
class GeneralizedResiduals:
    xx: float
    xz: float
    zz: float

    def max(self):
        return max(self.xx, self.xz, self.zz)


def _z_minor(gG, z, replace_slots):
    cols = list(z)
    for slot, col in replace_slots:
        cols[slot] = col
    if not cols:
        return 1.0
    return determinant(gG[:, cols])


def _block_scale(block, w, gG, tiny=1e-14):
    D = _z_minor(gG, block.z, ())
    if abs(D) <= tiny * max(1.0, float(np.max(np.abs(gG))) if gG.size else 1.0):
        raise DegenerateBlockError("degenerate z-block")
    return D


def verify_generalized_conditions(gsys, vmap, points):
    """Residuals of the (xx), (xz), (zz) relation families at chart points.

    (xx)  ``1/2 {x_a, x_b} = g_ab det dG/dz``
    (xz)  ``1/2 {x_a, z_s} = -sum_b g_ab det dG/d(z with x_b in slot s)``
    (zz)  ``{z_s, z_t} = sum_ab g_ab det dG/d(z with x_a, x_b in slots s, t)``

    Brackets between coordinates of different irreducible blocks must vanish;
    they are folded into the family of the matching type.
    """
    if vmap.dim != gsys.dim:
        raise ValueError("variable map and system dimensions differ")
    xx = xz = zz = 0.0
    for c in np.atleast_2d(np.asarray(points, dtype=float)):
        w = vmap.forward(c)
        P = vmap.poisson_matrix(c)
        for block in gsys.blocks:
            g = np.asarray(block.metric(w), dtype=float)
            gG = (jacobian_matrix(block.constraints, w) if block.constraints
                  else np.zeros((0, gsys.dim)))
            D = _block_scale(block, w, gG)
            X, Z = block.x, block.z
            for a in range(len(X)):
                for b in range(len(X)):
                    xx = max(xx, abs(0.5 * P[X[a], X[b]] - g[a, b] * D))
            for a in range(len(X)):
                for s in range(len(Z)):
                    rhs = -sum(g[a, b] * _z_minor(gG, Z, ((s, X[b]),))
                               for b in range(len(X)))
                    xz = max(xz, abs(0.5 * P[X[a], Z[s]] - rhs))
            for s in range(len(Z)):
                for t in range(s + 1, len(Z)):
                    rhs = sum(g[a, b] * _z_minor(gG, Z, ((s, X[a]), (t, X[b])))
                              for a in range(len(X)) for b in range(len(X)))
                    zz = max(zz, abs(P[Z[s], Z[t]] - rhs))
        for i, bi in enumerate(gsys.blocks):
            for bj in gsys.blocks[i + 1:]:
                for u in bi.x + bi.z:
                    for v in bj.x + bj.z:
                        val = abs(P[u, v])
                        if u in bi.x and v in bj.x:
                            xx = max(xx, val)
                        elif u in bi.z and v in bj.z:
                            zz = max(zz, val)
                        else:
                            xz = max(xz, val)
    return GeneralizedResiduals(xx, xz, zz)


def solve_metric(gsys, vmap, chart, block=0):
    """Metric factor implied by the (xx) relation: ``{x_a, x_b} / (2 det dG/dz)``."""
    b = gsys.blocks[block]
    c = np.asarray(chart, dtype=float)
    w = vmap.forward(c)
    P = vmap.poisson_matrix(c)
    gG = jacobian_matrix(b.constraints, w) if b.constraints else np.zeros((0, gsys.dim))
    D = _block_scale(b, w, gG)
    return 0.5 * P[np.ix_(b.x, b.x)] / D


def metric_from_map(vmap):
    """``g_ab(w) = 1/2 {x_a, x_b}_PB`` evaluated through ``vmap.inverse``."""
    def metric(w):
        return 0.5 * vmap.poisson_matrix(vmap.to_chart(w))
    return metric


def metric_pullback(g, change, at):
    """Transform a metric factor under ``x -> x'``: ``g' = J g J^T``.

    ``g`` is a matrix at ``at`` or a callable returning one; ``change`` is the
    list of fields ``x'_a(x)``.
    """
    at = np.asarray(at, dtype=float)
    gm = np.asarray(g(at) if callable(g) else g, dtype=float)
    J = jacobian_matrix(change, at)
    if J.shape[0] != J.shape[1] or J.shape[0] != gm.shape[0]:
        raise ValueError("change of variables must be square and match the metric")
    detJ = determinant(J)
    scale = float(np.prod(np.maximum(np.linalg.norm(J, axis=1), 1e-300)))
    if abs(detJ) <= 1e-12 * scale:
        raise NonInvertibleChange("non-invertible change of variables")
    return J @ gm @ J.T


# ---------------------------------------------------------------------------
# conjugate coordinates by quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraturePath:
    """Integrate along chart coordinate ``axis`` starting at ``origin``.

    Values on ``[lower, upper]`` are tabulated on ``nodes`` points and
    interpolated with cubic Hermite splines; points outside fall back to
    direct adaptive quadrature.
    """

    axis: int
    origin: float = 0.0
    lower: float = -10.0
    upper: float = 10.0
    nodes: int = 129


class _ConjugateCoordinate:
    def __init__(self, integrand, path, cache_size=256):
        self.integrand = integrand
        self.path = path
        self.cache_size = cache_size
        self._cache = OrderedDict()
        self._lock = threading.Lock()

    def _along(self, u, s):
        v = np.array(u, dtype=float)
        v[self.path.axis] = s
        try:
            with np.errstate(all="ignore"):
                val = self.integrand(v)
        except (ArithmeticError, ValueError):
            raise SingularIntegrand("singular integrand on path") from None
        if not math.isfinite(val):
            raise SingularIntegrand("singular integrand on path")
        return val

    def _quad(self, u, a, b):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, _ = integrate.quad(lambda s: self._along(u, s), a, b,
                                        epsabs=1e-14, epsrel=1e-13, limit=200)
            except integrate.IntegrationWarning:
                raise SingularIntegrand("singular integrand on path") from None
        return val

    def _spline(self, u):
        key = tuple(np.delete(np.asarray(u, dtype=float), self.path.axis))
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        p = self.path
        grid = np.linspace(p.lower, p.upper, p.nodes)
        slope = np.array([self._along(u, s) for s in grid])
        steps = [self._quad(u, grid[i], grid[i + 1]) for i in range(len(grid) - 1)]
        cum = np.concatenate(([0.0], np.cumsum(steps)))
        spl = interpolate.CubicHermiteSpline(grid, cum, slope)
        offset = (float(spl(p.origin)) if p.lower <= p.origin <= p.upper
                  else -self._quad(u, p.origin, p.lower))
        with self._lock:
            self._cache[key] = (spl, offset)
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return spl, offset

    def value(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim > 1:
            return np.array([self.value(col) for col in u.T])
        s = u[self.path.axis]
        if self.path.lower <= s <= self.path.upper:
            spl, offset = self._spline(u)
            return float(spl(s)) - offset
        return self._quad(u, self.path.origin, s)

    def grad(self, u):
        u = np.asarray(u, dtype=float)
        out = np.empty(u.shape[0])
        h = (np.finfo(float).eps ** (1 / 3)) * np.maximum(1.0, np.abs(u))
        for j in range(u.shape[0]):
            if j == self.path.axis:
                out[j] = self._along(u, u[j])
                continue
            up, um = u.copy(), u.copy()
            up[j] += h[j]
            um[j] -= h[j]
            out[j] = (self.value(up) - self.value(um)) / (up[j] - um[j])
        return out


def construct_conjugate_coordinates(constraints, z_axes, paths, metric=None):
    """Coordinates ``X_alpha = 2 int g_alpha det(dG/dz) dQ_alpha``.

    ``constraints`` are fields on a chart that contains the integration
    coordinates and the redundant ``z_axes``.  ``metric`` is the relevant
    metric component for each path: ``None`` (the value 1/2, which gives
    ``X = int det(dG/dz) dQ``), a number, a callable of the chart point, or a
    sequence of those, one per path.  Returns one field per path.
    """
    constraints = tuple(constraints)
    z_axes = [int(a) for a in z_axes]
    paths = tuple(paths)
    if len(constraints) != len(z_axes):
        raise ValueError("one z-axis per constraint")
    dim = constraints[0].dim
    if isinstance(metric, (list, tuple)):
        metrics = list(metric)
    else:
        metrics = [metric] * len(paths)
    out = []
    for path, g in zip(paths, metrics):
        if g is None:
            g = 0.5
        if callable(g):
            gfun = g
        else:
            gfun = (lambda gv: lambda u: gv)(float(g))

        def integrand(u, gfun=gfun):
            J = jacobian_matrix(constraints, u, z_axes)
            return 2.0 * float(gfun(u)) * determinant(J)

        coord = _ConjugateCoordinate(integrand, path)
        out.append(ScalarField(dim, coord.value, coord.grad, f"X{path.axis}"))
    return out


# ---------------------------------------------------------------------------
# relativistic free particle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelativisticReduction:
    """Gauge-fixed free particle on the chart ``(Q^1, P_1, Q^2, P_2, Q^3, P_3)``.

    ``phi`` and ``psi`` live on ``(P_0, P_1, P_2, P_3)``; ``constraint_spec``
    lives on the original chart ``(q^0, p_0, ..., q^3, p_3)``.
    """

    m: float
    c: float
    branch: int
    hamiltonian: HamiltonianSystem
    phi: ScalarField
    psi: ScalarField
    constraint_spec: ConstraintSpec

    def p0(self, P):
        P = np.asarray(P, dtype=float)
        return self.branch * np.sqrt(np.sum(P * P, axis=0) + (self.m * self.c) ** 2)

    def energy(self, chart):
        return float(self.hamiltonian.H(np.asarray(chart, dtype=float)))


def gauge_reduce_relativistic(m=1.0, c=1.0, branch=-1):
    """Reduce the free particle with gauge ``q^0 = c tau`` to three doublets.

    The reduced Hamiltonian is ``K = -c P_0`` with ``P_0`` on the chosen branch
    of ``P^mu P_mu = m^2 c^2``; the default negative branch gives the positive
    energy ``c sqrt(P^2 + m^2 c^2)``.
    """
    if not (m > 0 and c > 0):
        raise ValueError("m and c must be positive")
    if branch not in (-1, 1):
        raise ValueError("branch must be -1 or +1")
    mc2 = (m * c) ** 2
    s = branch

    def K(w):
        return -c * s * np.sqrt(w[1] ** 2 + w[3] ** 2 + w[5] ** 2 + mc2)

    ham = HamiltonianSystem(3, ScalarField.autodiff(6, K, "K"))
    phi = ScalarField.autodiff(
        4, lambda w: w[0] ** 2 - w[1] ** 2 - w[2] ** 2 - w[3] ** 2 - mc2, "Phi")
    psi = ScalarField.autodiff(
        4, lambda w: w[0] - s * np.sqrt(w[1] ** 2 + w[2] ** 2 + w[3] ** 2 + mc2), "Psi")
    phi8 = ScalarField.autodiff(
        8, lambda w: w[1] ** 2 - w[3] ** 2 - w[5] ** 2 - w[7] ** 2 - mc2, "phi")
    chi8 = coordinate(8, 0, "chi")
    spec = ConstraintSpec((phi8,), (chi8,), Layout.canonical(4))
    return RelativisticReduction(m, c, s, ham, phi, psi, spec)
