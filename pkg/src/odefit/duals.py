"""Forward-mode derivative propagation on numpy arrays.

A :class:`Dual` bundles a value array with a stack of tangent arrays, one
slot per tracked differentiation direction.  Tangents live on a *leading*
axis, shape ``(q,) + value_shape``, so ordinary numpy broadcasting (which
aligns trailing axes) applies to the tangent stack unchanged.  Any numeric
routine written against plain arrays with the operators below also accepts
duals and then returns the directional derivatives of its result.

The value part of every operation uses the same numpy expressions as the
plain path, so values agree bitwise with an undifferentiated run.
"""

from __future__ import annotations

import numpy as np


class Dual:
    """Array value plus tangents stacked on a leading axis.

    Parameters
    ----------
    val : array_like, shape S
    tan : array_like, shape (q,) + S
        ``tan[k]`` is the derivative of ``val`` along direction ``k``.
    """

    __slots__ = ("val", "tan")

    # Make numpy hand mixed expressions like `ndarray * Dual` to our
    # reflected operators instead of trying (and failing) elementwise.
    __array_ufunc__ = None

    def __init__(self, val, tan):
        self.val = np.asarray(val, dtype=float)
        self.tan = np.asarray(tan, dtype=float)

    @staticmethod
    def seed(theta):
        """Wrap a parameter vector with identity tangents (q = len(theta))."""
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1:
            raise ValueError("seed expects a 1-d parameter vector")
        return Dual(theta, np.eye(theta.size))

    # ---- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def nq(self):
        """Number of tracked directions."""
        return self.tan.shape[0]

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Dual(val={self.val!r}, q={self.nq})"

    # ---- structure -----------------------------------------------------

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Dual(self.val[idx], self.tan[(slice(None),) + idx])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.val.reshape(shape), self.tan.reshape((self.nq,) + tuple(shape)))

    def sum(self, axis=None):
        if axis is None:
            tax = tuple(range(1, self.tan.ndim))
            return Dual(self.val.sum(), self.tan.sum(axis=tax) if tax else self.tan)
        if axis < 0:
            axis += self.val.ndim
        return Dual(self.val.sum(axis=axis), self.tan.sum(axis=axis + 1))

    # ---- arithmetic ----------------------------------------------------

    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.tan + other.tan)
        return Dual(self.val + other, _keep(self.tan, np.shape(other), self.val.shape))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.tan - other.tan)
        return Dual(self.val - other, _keep(self.tan, np.shape(other), self.val.shape))

    def __rsub__(self, other):
        return Dual(other - self.val, _keep(-self.tan, np.shape(other), self.val.shape))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.tan * other.val + self.val * other.tan)
        val = self.val * other
        return Dual(val, _widen(self.tan, self.val.shape, np.shape(val)) * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            val = self.val / other.val
            return Dual(val, (self.tan - val * other.tan) / other.val)
        val = self.val / other
        return Dual(val, _widen(self.tan, self.val.shape, np.shape(val)) / other)

    def __rtruediv__(self, other):
        val = other / self.val
        tan = _widen(self.tan, self.val.shape, np.shape(val))
        return Dual(val, -val * tan / self.val)

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)):
            raise TypeError("Dual ** exponent must be an integer")
        if n == 0:
            return Dual(np.ones_like(self.val), np.zeros_like(self.tan))
        return Dual(self.val ** n, n * self.val ** (n - 1) * self.tan)


def _keep(tan, other_shape, val_shape):
    """Tangent of dual +- plain: broadcast tan if the plain operand widens val."""
    out_shape = np.broadcast_shapes(val_shape, other_shape)
    if out_shape == val_shape:
        return tan
    return np.broadcast_to(tan, tan.shape[: 1] + out_shape).copy()


def _widen(tan, val_shape, out_shape):
    """Align tan (q,)+val_shape for elementwise ops against an out_shape operand.

    Padding singleton axes after the tangent axis keeps the value axes
    right-aligned, so e.g. a scalar dual times a vector yields tan (q, n)
    rather than colliding the tangent axis with the value axis.
    """
    if out_shape == val_shape:
        return tan
    pad = (1,) * (len(out_shape) - len(val_shape))
    return tan.reshape(tan.shape[:1] + pad + val_shape)


# ---- generic math ------------------------------------------------------


def value(x):
    """Value part of `x`, whether dual or plain."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def tanh(x):
    if isinstance(x, Dual):
        t = np.tanh(x.val)
        return Dual(t, (1.0 - t * t) * x.tan)
    return np.tanh(x)


def exp(x):
    if isinstance(x, Dual):
        e = np.exp(x.val)
        return Dual(e, e * x.tan)
    return np.exp(x)


def all_finite(x):
    """True when every entry of the value part is finite."""
    return bool(np.isfinite(value(x)).all())


def promote(x, q):
    """Lift a plain array to a dual with zero tangents in q directions."""
    if isinstance(x, Dual):
        return x
    x = np.asarray(x, dtype=float)
    return Dual(x, np.zeros((q,) + x.shape))


def matvec(x, w):
    """`x @ w` where w is a plain matrix and x may be dual (last axis contracts)."""
    if isinstance(x, Dual):
        return Dual(x.val @ w, x.tan @ w)
    return x @ w


def stack_last(items):
    """Stack components onto a new trailing axis; dual if any item is dual."""
    if any(isinstance(it, Dual) for it in items):
        q = next(it.nq for it in items if isinstance(it, Dual))
        items = [promote(it, q) for it in items]
        return Dual(np.stack([it.val for it in items], axis=-1),
                    np.stack([it.tan for it in items], axis=-1))
    return np.stack([np.asarray(it, dtype=float) for it in items], axis=-1)
