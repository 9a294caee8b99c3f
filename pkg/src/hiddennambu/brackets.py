"""Poisson and Nambu brackets over subsystem layouts.

A :class:`Layout` lists the coordinate blocks a bracket sums over.  Poisson
brackets use blocks ``(q_k, p_k)``; Nambu brackets use blocks of N
coordinates.  Both are evaluated the same way: gradients of the arguments are
stacked into a matrix and the bracket is the sum over blocks of the
determinant of the block columns.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .fields import determinant, jacobian_matrix, permutation_sign

__all__ = [
    "LayoutError",
    "Layout",
    "BracketContext",
    "block_bracket",
    "poisson_bracket",
    "poisson_matrix",
    "nambu_bracket",
    "verify_jacobian_decomposition",
]


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Layout:
    """Coordinate blocks of a phase space.

    ``blocks`` is a tuple of index tuples into a coordinate vector of length
    ``dim``.  Blocks normally partition the coordinates; shared indices are
    allowed for multiplets that share a redundant variable.
    """

    blocks: tuple
    dim: int

    def __post_init__(self):
        blocks = tuple(tuple(int(i) for i in b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not blocks:
            raise LayoutError("layout needs at least one block")
        for b in blocks:
            if len(set(b)) != len(b):
                raise LayoutError("repeated index inside a block")
            if any(i < 0 or i >= self.dim for i in b):
                raise LayoutError("block index out of range")

    @classmethod
    def canonical(cls, n):
        """n interleaved doublets ``(q_1, p_1, ..., q_n, p_n)``."""
        return cls(tuple((2 * k, 2 * k + 1) for k in range(n)), 2 * n)

    @classmethod
    def multiplets(cls, arity, n=1):
        """n consecutive multiplets of the given arity."""
        return cls(tuple(tuple(range(arity * k, arity * (k + 1)))
                         for k in range(n)), arity * n)

    @property
    def arity(self):
        sizes = {len(b) for b in self.blocks}
        return sizes.pop() if len(sizes) == 1 else None

    @property
    def is_partition(self):
        flat = [i for b in self.blocks for i in b]
        return sorted(flat) == list(range(self.dim))

    def require_poisson(self):
        if self.arity != 2:
            raise LayoutError("layout mismatch: Poisson brackets need doublets")

    def require_nambu(self):
        if self.arity is None or self.arity < 2:
            raise LayoutError("layout mismatch: Nambu brackets need uniform arity >= 2")


BracketContext = Layout


def block_bracket(grads, layout):
    """Sum over blocks of ``det(grads[:, block])`` for a stacked gradient matrix."""
    grads = np.asarray(grads, dtype=float)
    return sum(determinant(grads[:, list(b)]) for b in layout.blocks)


def _check_point(fields, at, layout):
    at = np.asarray(at, dtype=float)
    if at.shape[0] != layout.dim:
        raise LayoutError("layout mismatch: point length differs from layout")
    for f in fields:
        if f.dim != layout.dim:
            raise LayoutError("layout mismatch: field dimension differs from layout")
    return at


def poisson_bracket(A, B, at, ctx):
    """``{A, B} = sum_k d(A, B)/d(q_k, p_k)``."""
    ctx.require_poisson()
    at = _check_point((A, B), at, ctx)
    return block_bracket(jacobian_matrix((A, B), at), ctx)


def poisson_matrix(fields, at, ctx):
    """Matrix of pairwise Poisson brackets ``{x_a, x_b}``."""
    ctx.require_poisson()
    fields = list(fields)
    at = _check_point(fields, at, ctx)
    grads = jacobian_matrix(fields, at)
    n = len(fields)
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            v = block_bracket(grads[[a, b]], ctx)
            out[a, b] = v
            out[b, a] = -v
    return out


def nambu_bracket(fields, at, ctx):
    """``{A_1, ..., A_N} = sum_k d(A_1..A_N)/d(x_1(k)..x_N(k))``."""
    ctx.require_nambu()
    fields = list(fields)
    if len(fields) != ctx.arity:
        raise LayoutError(
            f"arity mismatch: {len(fields)} fields for arity-{ctx.arity} layout")
    at = _check_point(fields, at, ctx)
    return block_bracket(jacobian_matrix(fields, at), ctx)


def verify_jacobian_decomposition(A, at, split):
    """Residual of the split-determinant identity.

    The full Jacobian ``d(A_1..A_N)/d(x_1..x_N)`` is compared with
    ``1/(h! t!) sum eps_{i_1..i_N} d(A_1..A_h)/d(x_i_1..x_i_h)
    d(A_{h+1}..A_N)/d(x_i_{h+1}..x_i_N)``.  The sum over orderings inside
    each factor collapses to ``h! t!`` copies of the ordered-subset term, so
    the right side is evaluated as a generalized Laplace expansion over
    subsets.  Returns the absolute difference.
    """
    A = list(A)
    head, tail = (int(s) for s in split)
    at = np.asarray(at, dtype=float)
    n = at.shape[0]
    if head + tail != len(A) or len(A) != n:
        raise ValueError("split must cover all fields and coordinates")
    grads = jacobian_matrix(A, at)
    full = determinant(grads)
    if head == 0 or tail == 0:
        return 0.0
    total = 0.0
    cols = range(n)
    for S in combinations(cols, head):
        rest = tuple(c for c in cols if c not in S)
        sign = permutation_sign(S + rest)
        total += (sign * determinant(grads[:head][:, list(S)])
                  * determinant(grads[head:][:, list(rest)]))
    return abs(full - total)
