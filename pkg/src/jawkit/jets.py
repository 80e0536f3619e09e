"""Truncated Taylor polynomials ("jets") for forward-mode differentiation.

A :class:`Jet` of order ``K`` stores normalized Taylor coefficients
``c[k] = f^(k)(0) / k!`` of an array-valued path ``t -> f(t)``, so
``coeffs`` has shape ``(K + 1, *value_shape)``.  Arithmetic on jets
propagates these coefficients exactly through products, sums, contractions
and the logistic function, which is all the model gradients need.

Only the operations used by the predictors are implemented.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class Jet:
    __slots__ = ("coeffs",)
    __array_ufunc__ = None  # ndarray (op) Jet defers to the Jet methods

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)

    @classmethod
    def constant(cls, value, order):
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + value.shape)
        c[0] = value
        return cls(c)

    @classmethod
    def line(cls, value, direction, order):
        """The path ``value + t * direction``."""
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + np.broadcast_shapes(value.shape, np.shape(direction)))
        c[0] = value
        if order >= 1:
            c[1] = direction
        return cls(c)

    @property
    def order(self):
        return self.coeffs.shape[0] - 1

    @property
    def shape(self):
        return self.coeffs.shape[1:]

    @property
    def primal(self):
        return self.coeffs[0]

    def __repr__(self):
        return f"Jet(order={self.order}, shape={self.shape})"

    # --- linear structure -------------------------------------------------
    def _lift(self, other):
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ValueError(f"jet orders differ: {self.order} vs {other.order}")
            return other
        return Jet.constant(other, self.order)

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self._lift(other).coeffs + self.coeffs)
        shape = np.broadcast_shapes(self.shape, np.shape(other))
        c = np.broadcast_to(self.coeffs, (self.order + 1,) + shape).copy()
        c[0] += other
        return Jet(c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coeffs * np.asarray(other, dtype=float))
        other = self._lift(other)
        a, b = self.coeffs, other.coeffs
        out = np.zeros((self.order + 1,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
        for k in range(self.order + 1):
            for j in range(k + 1):
                out[k] += a[j] * b[k - j]
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            raise NotImplementedError("division by a jet is not needed")
        return Jet(self.coeffs / np.asarray(other, dtype=float))

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.coeffs[(slice(None),) + idx])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Jet(self.coeffs.reshape((self.order + 1,) + tuple(shape)))

    def sum(self, axis=None):
        if axis is None:
            axis = tuple(range(1, self.coeffs.ndim))
        elif isinstance(axis, tuple):
            axis = tuple(a + 1 if a >= 0 else a for a in axis)
        else:
            axis = axis + 1 if axis >= 0 else axis
        return Jet(self.coeffs.sum(axis=axis))


def as_jet(x, order):
    return x if isinstance(x, Jet) else Jet.constant(x, order)


def einsum(subscripts, a, b):
    """Bilinear contraction of two operands, either of which may be a jet."""
    if not isinstance(a, Jet) and not isinstance(b, Jet):
        return np.einsum(subscripts, a, b)
    if not isinstance(a, Jet):
        return Jet(np.stack([np.einsum(subscripts, a, bk) for bk in b.coeffs]))
    if not isinstance(b, Jet):
        return Jet(np.stack([np.einsum(subscripts, ak, b) for ak in a.coeffs]))
    if a.order != b.order:
        raise ValueError(f"jet orders differ: {a.order} vs {b.order}")
    terms = []
    for k in range(a.order + 1):
        acc = np.einsum(subscripts, a.coeffs[0], b.coeffs[k])
        for j in range(1, k + 1):
            acc = acc + np.einsum(subscripts, a.coeffs[j], b.coeffs[k - j])
        terms.append(acc)
    return Jet(np.stack(terms))


def sigmoid(a):
    """Logistic function, propagated through the ODE ``s' = s (1 - s) a'``."""
    if not isinstance(a, Jet):
        return expit(a)
    K = a.order
    s = np.zeros_like(a.coeffs)
    q = np.zeros_like(a.coeffs)  # coefficients of s - s**2
    s[0] = expit(a.coeffs[0])
    q[0] = s[0] - s[0] ** 2
    for k in range(1, K + 1):
        acc = np.zeros_like(s[0])
        for j in range(1, k + 1):
            acc += j * a.coeffs[j] * q[k - j]
        s[k] = acc / k
        sq = np.zeros_like(s[0])
        for j in range(k + 1):
            sq += s[j] * s[k - j]
        q[k] = s[k] - sq
    return Jet(s)


def concatenate(parts, axis=0):
    """Concatenate jets (and arrays) along a value axis."""
    order = max((p.order for p in parts if isinstance(p, Jet)), default=None)
    if order is None:
        return np.concatenate(parts, axis=axis)
    ax = axis + 1 if axis >= 0 else axis
    return Jet(np.concatenate([as_jet(p, order).coeffs for p in parts], axis=ax))
