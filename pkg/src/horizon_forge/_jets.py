"""Truncated bivariate Taylor jets.

A :class:`Jet` of order ``N`` carries ``d^{i+j} f / dx^i ds^j`` for
``i + j <= N`` as numpy arrays that broadcast against each other.  Products
follow Leibniz; :meth:`Jet.dx` and :meth:`Jet.ds` shift the table and drop
one order.
"""

from __future__ import annotations

from math import comb

import numpy as np


def _keys(order):
    return [(i, k - i) for k in range(order + 1) for i in range(k, -1, -1)]


class Jet:
    __slots__ = ("order", "c")

    def __init__(self, order, c):
        self.order = order
        self.c = c

    @classmethod
    def const(cls, value, order):
        c = {key: 0.0 for key in _keys(order)}
        c[(0, 0)] = value
        return cls(order, c)

    @classmethod
    def of_x(cls, derivs, order):
        """Jet of a function of ``x`` alone; ``derivs[i] = f^{(i)}(x)``."""
        c = {key: 0.0 for key in _keys(order)}
        for i in range(order + 1):
            c[(i, 0)] = derivs[i]
        return cls(order, c)

    @classmethod
    def of_s(cls, derivs, order):
        c = {key: 0.0 for key in _keys(order)}
        for j in range(order + 1):
            c[(0, j)] = derivs[j]
        return cls(order, c)

    def __getitem__(self, key):
        return self.c[key]

    @property
    def val(self):
        return self.c[(0, 0)]

    def truncate(self, order):
        return Jet(order, {key: self.c[key] for key in _keys(order)})

    def _coerce(self, other):
        if isinstance(other, Jet):
            return other
        return Jet.const(other, self.order)

    def __add__(self, other):
        other = self._coerce(other)
        order = min(self.order, other.order)
        return Jet(order, {key: self.c[key] + other.c[key] for key in _keys(order)})

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.order, {key: -v for key, v in self.c.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.order, {key: v * other for key, v in self.c.items()})
        order = min(self.order, other.order)
        out = {}
        for a, b in _keys(order):
            acc = 0.0
            for i in range(a + 1):
                for j in range(b + 1):
                    acc = acc + comb(a, i) * comb(b, j) * self.c[(i, j)] * other.c[(a - i, b - j)]
            out[(a, b)] = acc
        return Jet(order, out)

    __rmul__ = __mul__

    def dx(self):
        order = self.order - 1
        return Jet(order, {(i, j): self.c[(i + 1, j)] for i, j in _keys(order)})

    def ds(self):
        order = self.order - 1
        return Jet(order, {(i, j): self.c[(i, j + 1)] for i, j in _keys(order)})

    def broadcast(self, shape):
        return Jet(self.order, {k: np.broadcast_to(v, shape).astype(float) for k, v in self.c.items()})

    def second_order_arrays(self, shape):
        """``(f, f_x, f_s, f_xx, f_xs, f_ss)`` as contiguous float arrays."""
        keys = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        return tuple(np.ascontiguousarray(np.broadcast_to(self.c[k], shape), dtype=float)
                     for k in keys)
