"""Forward-mode dual numbers carrying a full gradient vector.

A :class:`Dual` holds a value and the gradient of that value with respect to
the seed coordinates.  Values may be scalars or numpy arrays, in which case the
gradient has shape ``(dim,) + value.shape`` and every operation broadcasts
over the trailing sample axes.  Functions written with ordinary arithmetic and
``np.sqrt``/``np.exp``/... work unchanged on duals.
"""

import numpy as np

__all__ = ["Dual", "seed", "value_and_gradient"]


class Dual:
    __slots__ = ("val", "grad")

    # make numpy defer to our reflected operators
    __array_priority__ = 1000

    def __init__(self, val, grad):
        self.val = val
        self.grad = grad

    def __repr__(self):
        return f"Dual({self.val!r}, {self.grad!r})"

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.grad + other.grad)
        return Dual(self.val + other, self.grad)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.grad - other.grad)
        return Dual(self.val - other, self.grad)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.grad)

    def __neg__(self):
        return Dual(-self.val, -self.grad)

    def __pos__(self):
        return self

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.grad * other.val + other.grad * self.val)
        return Dual(self.val * other, self.grad * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv,
                        (self.grad - other.grad * (self.val * inv)) * inv)
        return Dual(self.val / other, self.grad / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        return Dual(other * inv, -self.grad * (other * inv * inv))

    def __pow__(self, other):
        if isinstance(other, Dual):
            return (other * self.log()).exp()
        if not np.isscalar(other):
            return Dual(self.val ** other,
                        self.grad * (other * self.val ** (other - 1)))
        if other == 2:
            return Dual(self.val * self.val, self.grad * (2.0 * self.val))
        if other == 1:
            return self
        if other == 0:
            return Dual(self.val ** 0, self.grad * 0.0)
        return Dual(self.val ** other,
                    self.grad * (other * self.val ** (other - 1)))

    def __rpow__(self, other):
        # other ** self with constant base
        out = other ** self.val
        return Dual(out, self.grad * (out * np.log(other)))

    # -- elementary functions -----------------------------------------------
    def sqrt(self):
        r = np.sqrt(self.val)
        return Dual(r, self.grad * (0.5 / r))

    def exp(self):
        e = np.exp(self.val)
        return Dual(e, self.grad * e)

    def log(self):
        return Dual(np.log(self.val), self.grad / self.val)

    def sin(self):
        return Dual(np.sin(self.val), self.grad * np.cos(self.val))

    def cos(self):
        return Dual(np.cos(self.val), -self.grad * np.sin(self.val))

    def tanh(self):
        t = np.tanh(self.val)
        return Dual(t, self.grad * (1.0 - t * t))

    def absolute(self):
        return Dual(np.abs(self.val), self.grad * np.sign(self.val))

    __abs__ = absolute

    _UNARY = {
        np.sqrt: "sqrt", np.exp: "exp", np.log: "log", np.sin: "sin",
        np.cos: "cos", np.tanh: "tanh", np.absolute: "absolute",
        np.negative: "__neg__", np.positive: "__pos__",
    }
    _BINARY = {
        np.add: ("__add__", "__radd__"),
        np.subtract: ("__sub__", "__rsub__"),
        np.multiply: ("__mul__", "__rmul__"),
        np.true_divide: ("__truediv__", "__rtruediv__"),
        np.power: ("__pow__", "__rpow__"),
    }

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            return NotImplemented
        if ufunc is np.square:
            return inputs[0] ** 2
        if ufunc in self._UNARY and len(inputs) == 1:
            return getattr(inputs[0], self._UNARY[ufunc])()
        if ufunc in self._BINARY and len(inputs) == 2:
            a, b = inputs
            fwd, rev = self._BINARY[ufunc]
            if isinstance(a, Dual):
                return getattr(a, fwd)(b)
            return getattr(b, rev)(a)
        return NotImplemented


def seed(point):
    """Independent duals for each coordinate of ``point``.

    ``point`` has shape ``(dim,)`` or ``(dim, ...)``; each returned dual has a
    unit gradient along its own coordinate.
    """
    point = np.asarray(point, dtype=float)
    dim = point.shape[0]
    eye = np.eye(dim)
    extra = point.shape[1:]
    out = []
    for j in range(dim):
        g = eye[j].reshape((dim,) + (1,) * len(extra))
        if extra:
            g = np.broadcast_to(g, (dim,) + extra).copy()
        out.append(Dual(point[j], g))
    return out


def value_and_gradient(func, point):
    """Evaluate ``func`` on dual-seeded coordinates.

    Returns ``(value, gradient)``; constant results get a zero gradient.
    """
    point = np.asarray(point, dtype=float)
    res = func(seed(point))
    if isinstance(res, Dual):
        grad = np.broadcast_to(res.grad, point.shape).astype(float)
        return res.val, grad
    return res, np.zeros(point.shape)
