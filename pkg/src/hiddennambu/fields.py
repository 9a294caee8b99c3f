"""Scalar fields, gradients and Jacobian determinants.

Every bracket and right-hand side in the package reduces to two kernels
defined here: the gradient of a scalar field at a point and the determinant
of a small square matrix of partial derivatives.

Field functions take a single argument ``w`` indexed by coordinate, so that
``w[j]`` is the j-th coordinate.  ``w`` may be a 1-D array (one point), a 2-D
array of shape ``(dim, n_samples)`` (vectorized evaluation), or a list of
:class:`~hiddennambu.autodiff.Dual` numbers (exact gradients).  Writing field
functions with plain arithmetic and ``np.sqrt``/``np.exp`` keeps all three
uses working.
"""

from dataclasses import dataclass
import math
from typing import Callable, Optional

import numpy as np

from .autodiff import Dual

__all__ = [
    "NonFiniteEvaluation",
    "ScalarField",
    "coordinate",
    "constant",
    "compose",
    "embed",
    "gradient",
    "finite_difference_gradient",
    "fd_step",
    "determinant",
    "jacobian_matrix",
    "jacobian_determinant",
    "permutation_sign",
]

_CBRT_EPS = np.finfo(float).eps ** (1.0 / 3.0)


class NonFiniteEvaluation(ArithmeticError):
    """A field or one of its derivatives evaluated to inf/nan."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def _dual_seed(point):
    dim = len(point)
    eye = np.eye(dim)
    return [Dual(float(point[j]), eye[j]) for j in range(dim)]


def _dual_gradient(func, point):
    point = np.asarray(point, dtype=float)
    if point.ndim == 1:
        res = func(_dual_seed(point))
        if isinstance(res, Dual):
            return np.asarray(res.grad, dtype=float)
        return np.zeros(point.shape[0])
    from .autodiff import value_and_gradient
    return value_and_gradient(func, point)[1]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A real function of ``dim`` coordinates with an optional exact gradient.

    ``grad_func`` maps a point to a vector of length ``dim``.  Use
    :meth:`autodiff` to get an exact gradient from dual numbers.
    """

    dim: int
    func: Callable
    grad_func: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError("field dimension must be positive")

    @classmethod
    def autodiff(cls, dim, func, name=""):
        return cls(dim, func, lambda w: _dual_gradient(func, w), name)

    def __call__(self, w):
        return self.func(w)

    def __repr__(self):
        label = self.name or getattr(self.func, "__name__", "field")
        return f"ScalarField({label!r}, dim={self.dim})"

    @property
    def has_gradient(self):
        return self.grad_func is not None

    # -- algebra (keeps exact gradients when both sides have them) ----------
    def _combine(self, other, op, dop, symbol):
        if isinstance(other, ScalarField):
            if other.dim != self.dim:
                raise ValueError("field dimensions differ")
            f, g = self.func, other.func
            func = lambda w: op(f(w), g(w))
            grad = None
            if self.grad_func is not None and other.grad_func is not None:
                fg, gg = self.grad_func, other.grad_func
                grad = lambda w: dop(f(w), g(w), fg(w), gg(w))
            return ScalarField(self.dim, func, grad,
                               f"({self.name}{symbol}{other.name})")
        c = float(other)
        f = self.func
        grad = None
        if self.grad_func is not None:
            fg = self.grad_func
            grad = lambda w: dop(f(w), c, fg(w), 0.0)
        return ScalarField(self.dim, lambda w: op(f(w), c), grad,
                           f"({self.name}{symbol}{c:g})")

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b,
                             lambda a, b, da, db: da + db, "+")

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b,
                             lambda a, b, da, db: da - db, "-")

    def __mul__(self, other):
        return self._combine(other, lambda a, b: a * b,
                             lambda a, b, da, db: da * b + db * a, "*")

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def coordinate(dim, index, name=""):
    """The projection ``w -> w[index]``."""
    e = np.zeros(dim)
    e[index] = 1.0
    return ScalarField(dim, lambda w: w[index], lambda w: e.copy(),
                       name or f"w{index}")


def constant(dim, value, name=""):
    return ScalarField(dim, lambda w: value + 0.0 * w[0],
                       lambda w: np.zeros(dim), name or f"{value:g}")


def compose(outer, inner):
    """``outer`` evaluated on the values of the ``inner`` fields.

    ``inner`` is a sequence of ``outer.dim`` fields sharing one dimension; the
    result lives on that dimension.  Gradients follow the chain rule and are
    exact when every piece has an exact gradient.
    """
    inner = tuple(inner)
    if len(inner) != outer.dim:
        raise ValueError(f"compose needs {outer.dim} inner fields, got {len(inner)}")
    dim = inner[0].dim
    if any(f.dim != dim for f in inner):
        raise ValueError("inner fields must share a dimension")
    of = outer.func
    funcs = [f.func for f in inner]

    def func(w):
        return of([f(w) for f in funcs])

    if outer.grad_func is None or any(f.grad_func is None for f in inner):
        return ScalarField(dim, func, None, outer.name)
    og = outer.grad_func
    grads = [f.grad_func for f in inner]

    def grad(w):
        vals = np.array([f(w) for f in funcs], dtype=float)
        jac = np.array([g(w) for g in grads], dtype=float)
        return np.asarray(og(vals)) @ jac

    return ScalarField(dim, func, grad, outer.name)


def embed(field, indices, dim):
    """Lift ``field`` on a few coordinates to a field on ``dim`` coordinates."""
    indices = tuple(int(i) for i in indices)
    if len(indices) != field.dim:
        raise ValueError("one index per field coordinate is required")
    f = field.func

    def func(w):
        return f([w[i] for i in indices])

    if field.grad_func is None:
        return ScalarField(dim, func, None, field.name)
    fg = field.grad_func

    def grad(w):
        out = np.zeros(dim)
        sub = np.array([w[i] for i in indices], dtype=float)
        np.add.at(out, list(indices), fg(sub))
        return out

    return ScalarField(dim, func, grad, field.name)


def fd_step(point, scale=1.0):
    """Per-coordinate central-difference step ``cbrt(eps) * max(1, |x_j|)``."""
    point = np.asarray(point, dtype=float)
    return scale * _CBRT_EPS * np.maximum(1.0, np.abs(point))


def _check_finite_value(value, index):
    if not np.all(np.isfinite(value)):
        raise NonFiniteEvaluation(
            f"non-finite evaluation at coordinate {index}", index)


def finite_difference_gradient(field, at, scale=1.0):
    """Central-difference gradient; ``scale`` multiplies the default step."""
    at = np.array(at, dtype=float)
    h = fd_step(at, scale)
    out = np.empty(at.shape[0])
    for j in range(at.shape[0]):
        xp = at.copy()
        xm = at.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        with np.errstate(all="ignore"):
            fp = field.func(xp)
            fm = field.func(xm)
        _check_finite_value(fp, j)
        _check_finite_value(fm, j)
        out[j] = (fp - fm) / (xp[j] - xm[j])
    return out


def gradient(field, at):
    """Gradient of ``field`` at ``at``: exact when available, else central FD."""
    at = np.asarray(at, dtype=float)
    if at.shape[0] != field.dim:
        raise ValueError(
            f"point has {at.shape[0]} coordinates, field expects {field.dim}")
    if field.grad_func is None:
        return finite_difference_gradient(field, at)
    with np.errstate(all="ignore"):
        g = np.asarray(field.grad_func(at), dtype=float)
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise NonFiniteEvaluation(
            f"non-finite evaluation at coordinate {bad[0]}", int(bad[0]))
    return g


def determinant(matrix):
    """Determinant by row reduction with partial pivoting."""
    a = [list(map(float, row)) for row in np.asarray(matrix, dtype=float)]
    n = len(a)
    if n == 0:
        raise ValueError("empty Jacobian")
    if any(len(row) != n for row in a):
        raise ValueError("determinant needs a square matrix")
    for row in a:
        for v in row:
            if not math.isfinite(v):
                raise NonFiniteEvaluation("non-finite Jacobian entry")
    det = 1.0
    for k in range(n):
        piv = max(range(k, n), key=lambda i: abs(a[i][k]))
        if a[piv][k] == 0.0:
            return 0.0
        if piv != k:
            a[k], a[piv] = a[piv], a[k]
            det = -det
        pk = a[k]
        d = pk[k]
        det *= d
        for i in range(k + 1, n):
            ai = a[i]
            f = ai[k] / d
            if f != 0.0:
                for j in range(k + 1, n):
                    ai[j] -= f * pk[j]
    return det


def jacobian_matrix(fields, at, axes=None):
    """Rows are gradients of ``fields``, restricted to the columns ``axes``."""
    at = np.asarray(at, dtype=float)
    rows = np.array([gradient(f, at) for f in fields], dtype=float)
    if axes is None:
        return rows
    return rows[:, list(axes)]


def jacobian_determinant(fields, at, axes):
    """``det d(fields_a) / d(coords_{axes_b})`` for k fields and k axes."""
    fields = list(fields)
    axes = [int(i) for i in axes]
    if not fields:
        raise ValueError("empty Jacobian")
    if len(axes) != len(fields):
        raise ValueError("need as many axes as fields")
    if len(set(axes)) != len(axes):
        raise ValueError("axes must be distinct")
    at = np.asarray(at, dtype=float)
    if any(a < 0 or a >= at.shape[0] for a in axes):
        raise ValueError("axis index out of range")
    return determinant(jacobian_matrix(fields, at, axes))


def permutation_sign(perm):
    """Sign of a sequence of distinct integers relative to sorted order (0 if repeated)."""
    perm = list(perm)
    if len(set(perm)) != len(perm):
        return 0
    sign = 1
    seen = [False] * len(perm)
    order = {v: i for i, v in enumerate(sorted(perm))}
    idx = [order[v] for v in perm]
    for i in range(len(idx)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = idx[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign
