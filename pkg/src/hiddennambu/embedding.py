"""Lifting an N-plet Nambu system to N + r redundant variables.

The new variables ``y_j(x_1..x_N)`` are described by a :class:`LiftSpec`.
Candidate constraints ``G~_c(y)`` are supplied by the caller and checked
against the brackets ``{y_j1, ..., y_jN}`` before a lift is built.
"""

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .brackets import Layout
from .fields import compose, coordinate, determinant, jacobian_matrix, permutation_sign
from .systems import NambuSystem

__all__ = ["LiftError", "LiftSpec", "verify_lift_conditions", "lift_nambu_system",
           "graph_lift", "lift_probe_brackets"]


class LiftError(ValueError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class LiftSpec:
    """``maps`` are the N + r fields ``y_j(x)``; ``candidates`` the r fields ``G~_c(y)``.

    ``inverse`` gives ``x`` as N fields of ``y``; by default ``x_i = y_i``,
    which suits graph lifts that keep the original coordinates first.
    """

    source: NambuSystem
    maps: tuple
    candidates: tuple
    inverse: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(self.source.layout.blocks) != 1:
            raise ValueError("lifts are defined for a single multiplet")
        N = self.N
        if len(self.maps) < N:
            raise ValueError("need at least N maps")
        if len(self.candidates) != self.r:
            raise ValueError(f"need r = {self.r} candidate constraints")
        for f in self.maps:
            if f.dim != N:
                raise ValueError("maps must be fields of the source multiplet")
        for g in self.candidates:
            if g.dim != N + self.r:
                raise ValueError("candidates must be fields of the lifted variables")
        if self.inverse is None:
            object.__setattr__(self, "inverse",
                               tuple(coordinate(N + self.r, i) for i in range(N)))
        elif len(self.inverse) != N:
            raise ValueError("inverse needs N fields")

    @property
    def N(self):
        return self.source.arity

    @property
    def r(self):
        return len(self.maps) - self.N

    def lift_point(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([f.func(x) for f in self.maps], dtype=float)

    def bracket_table(self, x):
        """``{y_j1, ..., y_jN}`` for every sorted N-subset of lifted indices."""
        J = jacobian_matrix(self.maps, x)
        return {S: determinant(J[list(S)]) for S in combinations(range(len(self.maps)), self.N)}

    def nonvanishing_brackets(self, x, tol=1e-10):
        return sum(abs(v) > tol for v in self.bracket_table(x).values())


def verify_lift_conditions(spec, points):
    """Max residual of the relation between ``G~_c`` and ``{y_j1..y_jN}``.

    For every sorted N-subset S the antisymmetric sum over the remaining
    indices collapses to ``eps(S, rest) * det dG~/dy_rest``.
    """
    N, r = spec.N, spec.r
    if r == 0:
        return 0.0
    total = N + r
    worst = 0.0
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        y = spec.lift_point(x)
        gG = jacobian_matrix(spec.candidates, y)
        for S, nb in spec.bracket_table(x).items():
            rest = tuple(j for j in range(total) if j not in S)
            lhs = permutation_sign(S + rest) * determinant(gG[:, list(rest)])
            worst = max(worst, abs(lhs - nb))
    return worst


def _default_points(N, count=20, seed=0):
    return np.random.default_rng(seed).uniform(-1.5, 1.5, size=(count, N))


def lift_nambu_system(spec, points=None, tol=1e-8):
    """The (N + r)-plet system with Hamiltonians pulled up through ``inverse``.

    Refuses (``LiftError`` carrying the residual) when the candidate
    constraints fail the bracket relation on ``points``.
    """
    if spec.r == 0:
        return spec.source
    pts = _default_points(spec.N) if points is None else points
    res = verify_lift_conditions(spec, pts)
    if not res <= tol:
        raise LiftError(f"lift condition residual {res:.3g} exceeds {tol:g}", res)
    up = [compose(h, spec.inverse) for h in spec.source.hamiltonians]
    return NambuSystem(up[0], tuple(up[1:]) + spec.candidates,
                       Layout.multiplets(spec.N + spec.r))


def graph_lift(source, extra):
    """Lift by ``y_{N+c} = phi_c(x)`` with ``G~_c = y_{N+c} - phi_c(y_1..y_N)``."""
    N = source.arity
    extra = tuple(extra)
    r = len(extra)
    maps = tuple(coordinate(N, i) for i in range(N)) + extra
    firsts = tuple(coordinate(N + r, i) for i in range(N))
    cands = tuple(coordinate(N + r, N + c) - compose(phi, firsts)
                  for c, phi in enumerate(extra))
    return LiftSpec(source, maps, cands)


def lift_probe_brackets(spec, probes, points):
    """Max ``|{G~_c, u_1, ..., u_{N-1}}|`` in the lifted variables.

    ``probes`` are N - 1 fields of the source multiplet, pulled up through
    ``spec.inverse``.
    """
    probes = tuple(probes)
    if len(probes) != spec.N - 1:
        raise ValueError("need N - 1 probes")
    up = [compose(u, spec.inverse) for u in probes]
    worst = 0.0
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        y = spec.lift_point(x)
        for G in spec.candidates:
            J = jacobian_matrix([G] + up + list(spec.candidates), y)
            worst = max(worst, abs(determinant(J)))
    return worst
