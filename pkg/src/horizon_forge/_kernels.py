"""Pointwise curvature kernels for ``E dx^2 + 2F dx ds + G ds^2 + P g_{S^k}``.

The formulas are written once as scalar functions.  They run unchanged on
numpy arrays (fallback path) and are compiled with numba into explicit loops
when ``HORIZON_FORGE_JIT`` is not "0" and numba imports.
"""

from __future__ import annotations

import numpy as np

from . import _config


def _curvature_point(E, Ex, Es, Exx, Exs, Ess, F, Fx, Fs, Fxx, Fxs, Fss,
                     G, Gx, Gs, Gxx, Gxs, Gss, P, Px, Ps, Pxx, Pxs, Pss, k):
    D = E * G - F * F
    # Brioschi
    a11 = -0.5 * Ess + Fxs - 0.5 * Gxx
    a12 = 0.5 * Ex
    a13 = Fx - 0.5 * Es
    a21 = Fs - 0.5 * Gx
    a31 = 0.5 * Gs
    det1 = (a11 * (E * G - F * F) - a12 * (a21 * G - F * a31)
            + a13 * (a21 * F - E * a31))
    det2 = -0.5 * Es * (0.5 * Es * G - 0.5 * F * Gx) + 0.5 * Gx * (0.5 * Es * F - 0.5 * E * Gx)
    K = (det1 - det2) / (D * D)
    # Christoffels (first kind, then raised)
    g11 = G / D
    g12 = -F / D
    g22 = E / D
    c1_11 = 0.5 * Ex
    c1_12 = 0.5 * Es
    c1_22 = Fs - 0.5 * Gx
    c2_11 = Fx - 0.5 * Es
    c2_12 = 0.5 * Gx
    c2_22 = 0.5 * Gs
    C1 = (g11 * (g11 * c1_11 + g12 * c2_11) + 2.0 * g12 * (g11 * c1_12 + g12 * c2_12)
          + g22 * (g11 * c1_22 + g12 * c2_22))
    C2 = (g11 * (g12 * c1_11 + g22 * c2_11) + 2.0 * g12 * (g12 * c1_12 + g22 * c2_12)
          + g22 * (g12 * c1_22 + g22 * c2_22))
    # fiber warping, phi = log(P)/2
    px = 0.5 * Px / P
    ps = 0.5 * Ps / P
    pxx = 0.5 * Pxx / P - 2.0 * px * px
    pxs = 0.5 * Pxs / P - 2.0 * px * ps
    pss = 0.5 * Pss / P - 2.0 * ps * ps
    lap = g11 * pxx + 2.0 * g12 * pxs + g22 * pss - C1 * px - C2 * ps
    grad2 = g11 * px * px + 2.0 * g12 * px * ps + g22 * ps * ps
    return 2.0 * K + k * (k - 1) / P - 2.0 * k * lap - k * (k + 1) * grad2


def _mean_curvature_point(E, F, G, Fs, Gx, Gs, P, Px, Ps, k, eps):
    D = E * G - F * F
    sg = np.sqrt(G)
    body = (0.5 * Gx / sg + 0.5 * k * sg * Px / P - Fs / sg
            + 0.5 * F * Gs / (G * sg) - 0.5 * k * F * Ps / (P * sg))
    return eps * body / np.sqrt(D)


def _curvature_numpy(E, F, G, P, k):
    return _curvature_point(*E, *F, *G, *P, float(k))


def _mean_curvature_numpy(E, F, G, Fs, Gx, Gs, P, Px, Ps, k, eps):
    return _mean_curvature_point(E, F, G, Fs, Gx, Gs, P, Px, Ps, float(k), float(eps))


_curvature_jit = None
_mean_curvature_jit = None

if _config.jit_requested():
    try:
        import numba
    except ImportError:  # pragma: no cover
        numba = None
    if numba is not None:
        _cp = numba.njit(cache=False, fastmath=False)(_curvature_point)
        _mp = numba.njit(cache=False, fastmath=False)(_mean_curvature_point)

        @numba.njit(cache=False)
        def _curv_loop(e, f, g, p, k, out):
            for i in range(out.size):
                out[i] = _cp(e[0, i], e[1, i], e[2, i], e[3, i], e[4, i], e[5, i],
                             f[0, i], f[1, i], f[2, i], f[3, i], f[4, i], f[5, i],
                             g[0, i], g[1, i], g[2, i], g[3, i], g[4, i], g[5, i],
                             p[0, i], p[1, i], p[2, i], p[3, i], p[4, i], p[5, i], k)
            return out

        @numba.njit(cache=False)
        def _mean_loop(a, k, eps, out):
            for i in range(out.size):
                out[i] = _mp(a[0, i], a[1, i], a[2, i], a[3, i], a[4, i], a[5, i],
                             a[6, i], a[7, i], a[8, i], k, eps)
            return out

        def _curvature_jit(E, F, G, P, k):
            shape = np.broadcast_shapes(*(np.shape(a) for a in (*E, *F, *G, *P)))
            stack = [np.stack([np.broadcast_to(a, shape).ravel() for a in comp]).astype(float)
                     for comp in (E, F, G, P)]
            out = np.empty(int(np.prod(shape)))
            return _curv_loop(*stack, float(k), out).reshape(shape)

        def _mean_curvature_jit(E, F, G, Fs, Gx, Gs, P, Px, Ps, k, eps):
            args = (E, F, G, Fs, Gx, Gs, P, Px, Ps)
            shape = np.broadcast_shapes(*(np.shape(a) for a in args))
            a = np.stack([np.broadcast_to(x, shape).ravel() for x in args]).astype(float)
            out = np.empty(a.shape[1])
            return _mean_loop(a, float(k), float(eps), out).reshape(shape)


class Taylor2:
    """Truncated series ``c0 + c1 t + c2 t^2`` with array coefficients."""

    __slots__ = ("c0", "c1", "c2")

    def __init__(self, c0, c1=0.0, c2=0.0):
        self.c0, self.c1, self.c2 = c0, c1, c2

    @staticmethod
    def _lift(o):
        return o if isinstance(o, Taylor2) else Taylor2(o)

    def __add__(self, o):
        o = self._lift(o)
        return Taylor2(self.c0 + o.c0, self.c1 + o.c1, self.c2 + o.c2)

    __radd__ = __add__

    def __neg__(self):
        return Taylor2(-self.c0, -self.c1, -self.c2)

    def __sub__(self, o):
        return self + (-self._lift(o))

    def __rsub__(self, o):
        return self._lift(o) - self

    def __mul__(self, o):
        if not isinstance(o, Taylor2):
            return Taylor2(self.c0 * o, self.c1 * o, self.c2 * o)
        return Taylor2(self.c0 * o.c0, self.c0 * o.c1 + self.c1 * o.c0,
                       self.c0 * o.c2 + self.c1 * o.c1 + self.c2 * o.c0)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = self._lift(o)
        q0 = self.c0 / o.c0
        q1 = (self.c1 - q0 * o.c1) / o.c0
        q2 = (self.c2 - q0 * o.c2 - q1 * o.c1) / o.c0
        return Taylor2(q0, q1, q2)

    def __rtruediv__(self, o):
        return self._lift(o) / self


def curvature_taylor(E, F, G, P, k):
    """Like :func:`curvature` for :class:`Taylor2` entries (always numpy)."""
    return _curvature_point(*E, *F, *G, *P, float(k))


def jit_active():
    return _curvature_jit is not None


def curvature(E, F, G, P, k, use_jit=None):
    """Scalar curvature from 6-tuples ``(f, f_x, f_s, f_xx, f_xs, f_ss)``."""
    if use_jit is None:
        use_jit = jit_active()
    if use_jit and _curvature_jit is not None:
        return _curvature_jit(E, F, G, P, k)
    return _curvature_numpy(E, F, G, P, k)


def mean_curvature(E, F, G, Fs, Gx, Gs, P, Px, Ps, k, eps, use_jit=None):
    """Mean curvature of ``x = const`` for the normal ``eps * grad x / |grad x|``."""
    if use_jit is None:
        use_jit = jit_active()
    if use_jit and _mean_curvature_jit is not None:
        return _mean_curvature_jit(E, F, G, Fs, Gx, Gs, P, Px, Ps, k, eps)
    return _mean_curvature_numpy(E, F, G, Fs, Gx, Gs, P, Px, Ps, k, eps)
