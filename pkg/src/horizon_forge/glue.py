"""Gluing, conformal collars, the conformal flow and the final assemblies.

Everything here acts on *fields*: reduced metrics

    E dx^2 + 2F dx ds + G ds^2 + P g_{S^k}

that can be evaluated (as order-2 jets) at any ``x`` on a fixed set of
``s`` nodes.  Radial metrics are fields with ``F = 0`` and ``P = G sin^2 s``;
the output of the second-order deformation is a field through
:class:`~horizon_forge.perturb2d.DeformedField`.  ``x`` is always the static
arclength coordinate, ``x = 0`` on the event horizon and ``x = L`` on the
cosmological horizon.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad, solve_ivp
from scipy.optimize import brentq

from . import _kernels
from ._jets import Jet
from .errors import (CertificationError, ContractViolation, DomainError, ExhaustionError,
                     NumericalError)
from .gkdss import static_metric
from .perturb2d import _smoothstep9
from .radial import conformal_scale

__all__ = [
    "AssemblyPlan",
    "BlendField",
    "ChainField",
    "ConformalField",
    "ConformalFlow",
    "CornerData",
    "DeltaField",
    "Field",
    "FlowState",
    "GluedMetric",
    "PiecewiseField",
    "Ramp",
    "ReflectedField",
    "ShiftedField",
    "StaticField",
    "TailRamp",
    "WarpedField",
    "as_field",
    "assembly_plan",
    "boundary_report",
    "chain_assemble",
    "conformal_flow",
    "corner_jump",
    "corner_sample",
    "mollify_corner",
    "prop42_field",
    "prop42_metric",
    "round_cap_corner",
    "theorem_main",
    "theorem_main0",
    "tilde_g_delta",
    "tilde_margin",
    "tilde_phi",
]

SIDES = ("-", "+")


def _col(a):
    return np.asarray(a, dtype=float)[:, None]


def _x_jet(vals):
    """Order-2 jet of a function of ``x`` from ``(f, f', f'')``."""
    return Jet.of_x([_col(v) for v in vals], 2)


def _sin_jet(s):
    sn, cs = np.sin(s)[None, :], np.cos(s)[None, :]
    return Jet.of_s([sn, cs, -sn], 2)


# ---------------------------------------------------------------- fields


class Field:
    """A reduced metric evaluable on ``(x, s)``; subclasses implement :meth:`jets`."""

    def __init__(self, k, s, label=""):
        self.k = int(k)
        self.s = np.asarray(s, dtype=float)
        self.label = label

    def jets(self, x):
        raise NotImplementedError

    def _shape(self, x):
        return (np.size(x), self.s.size)

    def arrays(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        shape = self._shape(x)
        return [c.second_order_arrays(shape) for c in self.jets(x)]

    def values(self, x):
        return [a[0] for a in self.arrays(x)]

    def curvature(self, x, use_jit=None):
        E, F, G, P = self.arrays(x)
        return _kernels.curvature(E, F, G, P, self.k, use_jit=use_jit)

    def principal_curvatures(self, x, eps=1.0):
        """``(kappa_s, kappa_fiber)`` of ``x = const`` for the normal ``eps * grad x``."""
        (E, Ex, Es, *_), (F, Fx, Fs, *_), (G, Gx, Gs, *_), (P, Px, Ps, *_) = self.arrays(x)
        D = E * G - F * F
        sg = np.sqrt(G)
        ks = eps * (0.5 * Gx / sg - Fs / sg + 0.5 * F * Gs / (G * sg)) / np.sqrt(D)
        kf = eps * (0.5 * sg * Px / P - 0.5 * F * Ps / (P * sg)) / np.sqrt(D)
        return ks, kf

    def mean_curvature(self, x, eps=1.0):
        ks, kf = self.principal_curvatures(x, eps)
        return ks + self.k * kf

    def offset_jets(self, x):
        """Jets of ``self - g_m`` computed without cancellation, or ``None``."""
        return None


class WarpedField(Field):
    """``e(x) dx^2 + b(x)^2 g_{S^{k+1}}``; ``b`` and ``e`` return value and two derivatives."""

    def __init__(self, k, s, b, e=None, label="warped"):
        super().__init__(k, s, label)
        self._b, self._e = b, e

    def jets(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        b = _x_jet(self._b(x))
        E = Jet.const(1.0, 2) if self._e is None else _x_jet(self._e(x))
        G = b * b
        sn = _sin_jet(self.s)
        return E, Jet.const(0.0, 2), G, G * sn * sn


class StaticField(WarpedField):
    """``g_m`` in arclength gauge."""

    def __init__(self, space, s):
        self.space = space
        prof = space.profile
        super().__init__(space.n - 2, s, lambda x: prof.jets(x)[:3], label="g_m")

    def offset_jets(self, x):
        return tuple(Jet.const(0.0, 2) for _ in range(4))


class ConformalField(Field):
    """``omega(x) * base`` with ``omega(x) -> (O, O', O'')``.

    ``phi`` may supply ``O - 1`` (and the same derivatives) directly, which
    keeps :meth:`offset_jets` exact when the factor is close to 1.
    """

    def __init__(self, base, omega=None, label="conformal", phi=None):
        super().__init__(base.k, base.s, label)
        if omega is None:
            def omega(x):
                p0, p1, p2 = phi(x)
                return 1.0 + p0, p1, p2
        self.base, self.omega, self.phi = base, omega, phi

    def jets(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        O = _x_jet(self.omega(x))
        return tuple(O * c for c in self.base.jets(x))

    def offset_jets(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        boff = self.base.offset_jets(x)
        if self.phi is None or boff is None:
            return None
        P = _x_jet(self.phi(x))
        O = _x_jet(self.omega(x))
        ref = [b - o for b, o in zip(self.base.jets(x), boff)]
        return tuple(P * r + O * o for r, o in zip(ref, boff))


class PiecewiseField(Field):
    """Field equal to ``pieces[i][2]`` on ``[lo_i, hi_i)``; later pieces win on overlaps.

    Rows are copied verbatim from the piece that owns them, so agreement
    with a piece is bitwise.
    """

    def __init__(self, pieces, label="piecewise"):
        f0 = pieces[0][2]
        super().__init__(f0.k, f0.s, label)
        self.pieces = list(pieces)

    def owner(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        own = np.full(x.size, -1)
        for i, (lo, hi, _) in enumerate(self.pieces):
            own[(x >= lo) & (x <= hi)] = i
        if np.any(own < 0):
            raise DomainError("point outside every piece")
        return own

    def jets(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        shape = self._shape(x)
        own = self.owner(x)
        out = [{} for _ in range(4)]
        for i in np.unique(own):
            rows = own == i
            parts = self.pieces[i][2].jets(x[rows])
            sub = (int(rows.sum()), shape[1])
            for c, jet in enumerate(parts):
                for key, val in jet.c.items():
                    if key[0] + key[1] > 2:
                        continue
                    arr = out[c].setdefault(key, np.empty(shape))
                    arr[rows] = np.broadcast_to(val, sub)
        return tuple(Jet(2, c) for c in out)


class ReflectedField(Field):
    """Pullback of ``base`` by ``x -> 2 x0 - x`` (odd x-derivatives and ``F`` flip sign)."""

    def __init__(self, base, x0, label=None):
        super().__init__(base.k, base.s, label or f"reflect({base.label})")
        self.base, self.x0 = base, float(x0)

    def jets(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = []
        for c, jet in enumerate(self.base.jets(2 * self.x0 - x)):
            flip = -1.0 if c == 1 else 1.0
            out.append(Jet(2, {key: val * (flip * (-1.0) ** key[0]) for key, val in jet.c.items()
                               if key[0] + key[1] <= 2}))
        return tuple(out)


class ShiftedField(Field):
    """``base`` translated: value at ``x`` is the base value at ``x - offset``."""

    def __init__(self, base, offset, label=None):
        super().__init__(base.k, base.s, label or f"shift({base.label})")
        self.base, self.offset = base, float(offset)

    def jets(self, x):
        return self.base.jets(np.atleast_1d(np.asarray(x, dtype=float)) - self.offset)


# ---------------------------------------------------------------- conformal collar


def _lapse_jets(space, x):
    """``(v, v', v'')`` in arclength on ``[0, L]``, with ``v >= 0``."""
    _, r1, r2, r3 = space.profile.jets(x)
    return np.maximum(r1, 0.0), r2, r3


def prop42_omega(space, t):
    """``Omega = 1 - t v^{3/2}`` and two x-derivatives (``-inf`` curvature at the horizons)."""

    def omega(x):
        v, v1, v2 = _lapse_jets(space, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            rv = np.sqrt(v)
            o2 = -t * (0.75 * v1 * v1 / rv + 1.5 * rv * v2)
        return 1.0 - t * v * rv, -1.5 * t * rv * v1, o2

    return omega


def prop42_phi(space, t):
    """``Omega - 1 = -t v^{3/2}`` with its derivatives."""
    omega = prop42_omega(space, t)

    def phi(x):
        O, O1, O2 = omega(x)
        v = _lapse_jets(space, x)[0]
        return -t * v * np.sqrt(v), O1, O2

    return phi


def prop42_field(space, t, s):
    return ConformalField(StaticField(space, s), prop42_omega(space, t), label=f"prop42(t={t:g})",
                          phi=prop42_phi(space, t))


def prop42_radial(space, t):
    """The same metric in the ``r`` coordinate as a :class:`RadialMetric`."""

    def omega(r):
        V, V1, V2 = space.V(r), space.dV(r), space.d2V(r)
        V = np.maximum(V, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = V ** 0.25
            o1 = -0.75 * t * V1 / q
            o2 = -0.75 * t * (V2 / q - 0.25 * V1 * V1 / (q * V))
        return 1.0 - t * q * q * q, o1, o2

    def bdot(r):
        V = np.maximum(space.V(r), 0.0)
        O = 1.0 - t * V ** 0.75
        return np.sqrt(V) - 0.75 * t * r * V ** 0.25 * space.dV(r) / (2 * O)

    return conformal_scale(static_metric(space), omega, bdot=bdot, label=f"prop42(t={t:g})")


def first_variation_prop42(space, r):
    """``(n-1)(3/4 v^{-1/2} kappa^2 - n/2 v^{3/2})``."""
    n = space.n
    v = space.v(r)
    k = space.kappa(r)
    return (n - 1) * (0.75 * k * k / np.sqrt(v) - 0.5 * n * v ** 1.5)


def collar_points(L, width, npts=200, side="-"):
    """Interior sample of the collar of arclength ``width`` (clustered at the horizon)."""
    u = 0.5 * (1 - np.cos(np.pi * (np.arange(npts) + 0.5) / npts))
    d = width * u
    return d if side == "-" else L - d


def prop42_metric(space, t=None, collar_width=None, npts=200, t0=0.5, halvings=20):
    """Conformal collar metric ``(1 - t v^{3/2}) g_m`` and its certificate.

    With ``t`` or ``collar_width`` left as ``None`` the pair is searched
    downward (collar ``L/4, L/8, ...``; ``t = t0 / 2^j``) until

    * ``R > n(n-1)`` on both collars (interior sample),
    * ``g~ = g_m`` on both horizons,
    * the horizon second fundamental form vanishes (``<= 1e-8``).

    Returns ``(radial_metric, certificate)``; the certificate also carries
    the chosen ``t`` and ``collar_width``.

    Raises
    ------
    ExhaustionError
        If no pair certifies.
    """
    L = space.profile.L
    widths = [collar_width] if collar_width is not None else [L / 2 ** j for j in range(2, 8)]
    ts = [t] if t is not None else [t0 / 2 ** j for j in range(halvings)]
    target = space.n * (space.n - 1)
    s = np.array([0.5 * math.pi])
    trace = []
    for w in widths:
        if not 0 < w <= L / 2:
            raise DomainError(f"collar width {w} outside (0, L/2]")
        for tt in ts:
            f = prop42_field(space, tt, s)
            margins, second = {}, {}
            for side in SIDES:
                x = collar_points(L, w, npts, side)
                margins[side] = float(np.min(f.curvature(x) - target))
                xb = np.array([0.0 if side == "-" else L])
                ks, kf = f.principal_curvatures(xb, 1.0)
                second[side] = float(max(np.max(np.abs(ks)), np.max(np.abs(kf))))
            omega = prop42_omega(space, tt)
            boundary = float(max(abs(omega(np.array([0.0]))[0][0] - 1), abs(omega(np.array([L]))[0][0] - 1)))
            ok = min(margins.values()) > 0 and max(second.values()) <= 1e-8 and boundary <= 1e-10
            trace.append({"t": tt, "collar_width": w, "min_R_margin": min(margins.values())})
            if ok:
                cert = {"t": tt, "collar_width": w, "min_R_margin": margins,
                        "boundary_second_fundamental_form": second, "boundary_metric_error": boundary,
                        "passed": True, "trace": trace}
                return prop42_radial(space, tt), cert
    raise ExhaustionError("no (t, collar) pair certifies the conformal collar", {"trace": trace})


# ---------------------------------------------------------------- corner mollifier

_S9 = np.polynomial.Polynomial([0, 0, 0, 0, 0, 126, -420, 540, -315, 70])
_IS9 = _S9.integ()


class Ramp:
    """Profile ``f(xi)`` of the blend ``sigma = f / xi``.

    ``f' = 1`` on ``[0, lam]``, drops to ``-a`` on ``[lam, 2 lam]`` and
    returns to 0 at ``Lam``; ``a`` is fixed by ``f(Lam) = 0`` and all joins
    are ``C^4``.  ``sigma`` is 1 on ``[0, lam]``, 0 past ``Lam``, and stays in
    ``[0, 1]``.
    """

    def __init__(self, lam, Lam):
        self.lam, self.Lam = float(lam), float(Lam)
        self.T = self.Lam - 2 * self.lam
        if not (self.lam > 0 and self.T > self.lam):
            raise DomainError(f"need 0 < 3 lam < Lam, got lam={lam}, Lam={Lam}")
        self.a = 3 * self.lam / (self.T + self.lam)

    def f(self, xi):
        xi = np.asarray(xi, dtype=float)
        lam, T, a = self.lam, self.T, self.a
        u = np.clip((xi - lam) / lam, 0.0, 1.0)
        w1 = np.clip(1.0 - (xi - 2 * lam) / T, 0.0, 1.0)
        S, S1 = _smoothstep9(u, 1)
        R, R1 = _smoothstep9(w1, 1)
        zone2 = (xi > lam) & (xi <= 2 * lam)
        zone3 = (xi > 2 * lam) & (xi < self.Lam)
        f = np.where(xi <= lam, xi, 0.0)
        f1 = np.where(xi <= lam, 1.0, 0.0)
        f2 = np.zeros_like(xi)
        f = np.where(zone2, xi - (1 + a) * lam * _IS9(u), f)
        f1 = np.where(zone2, 1 - (1 + a) * S, f1)
        f2 = np.where(zone2, -(1 + a) * S1 / lam, f2)
        f = np.where(zone3, a * T * _IS9(w1), f)
        f1 = np.where(zone3, -a * R, f1)
        f2 = np.where(zone3, a * R1 / T, f2)
        return f, f1, f2

    def sigma(self, xi):
        xi = np.asarray(xi, dtype=float)
        f, f1, f2 = self.f(xi)
        inner = xi <= self.lam
        safe = np.where(inner, 1.0, xi)
        s0 = np.where(inner, 1.0, f / safe)
        s1 = np.where(inner, 0.0, (f1 - s0) / safe)
        s2 = np.where(inner, 0.0, (f2 - 2 * s1) / safe)
        return s0, s1, s2


class BlendField(Field):
    """``outer + sigma(xi) (inner - outer)`` with ``xi = direction (x - x0)``."""

    def __init__(self, inner, outer, x0, direction, ramp, label="blend"):
        super().__init__(outer.k, outer.s, label)
        self.inner, self.outer = inner, outer
        self.x0, self.direction, self.ramp = float(x0), float(direction), ramp

    def jets(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        s0, s1, s2 = self.ramp.sigma(self.direction * (x - self.x0))
        sig = _x_jet((s0, self.direction * s1, s2))
        outer = self.outer.jets(x)
        oi, oo = self.inner.offset_jets(x), self.outer.offset_jets(x)
        if oi is not None and oo is not None:
            diff = [a - b for a, b in zip(oi, oo)]
        else:
            diff = [a - b for a, b in zip(self.inner.jets(x), outer)]
        return tuple(o + sig * h for o, h in zip(outer, diff))


class TailRamp(Ramp):
    """Ramp whose ``f''`` stays negative past ``2 lam`` like ``-lam^{1/2} xi^{-3/2}``.

    ``f' = 1 - S_1 - beta P`` with ``S_1`` the step on ``[lam, 2 lam]`` and
    ``P = S_1 (1 - sqrt(lam/xi)) D``, ``D`` stepping down on ``[ell, Lam]``;
    ``beta`` makes ``f(Lam) = 0``.  Needed when the inner metric differs from
    the outer one by a term of order ``xi^{3/2}``: against ``sigma = f/xi``
    such a term leaves ``-f xi^{-3/2}`` in the curvature, which the slowly
    decaying ``f''`` tail pays for.
    """

    _nodes, _weights = np.polynomial.legendre.leggauss(48)

    def __init__(self, lam, Lam, ell=None):
        self.lam, self.Lam = float(lam), float(Lam)
        self.ell = 0.5 * self.Lam if ell is None else float(ell)
        if not (0 < 2 * self.lam < self.ell < self.Lam):
            raise DomainError(f"need 0 < 2 lam < ell < Lam, got {lam}, {ell}, {Lam}")
        self.T = self.Lam - self.ell
        self.beta = 1.0
        self.beta = 1.5 * self.lam / float(self._int_P(np.array([self.lam]), np.array([self.Lam]))[0])
        self.a = self.beta

    def _P(self, xi, nder=0):
        lam = self.lam
        S, S1, S2 = _smoothstep9((xi - lam) / lam, 2)
        D, D1, D2 = _smoothstep9((xi - self.ell) / self.T, 2)
        D, D1, D2 = 1 - D, -D1 / self.T, -D2 / self.T ** 2
        S1, S2 = S1 / lam, S2 / lam ** 2
        xs = np.maximum(xi, lam)
        rq = np.sqrt(lam / xs)
        q, q1, q2 = 1 - rq, 0.5 * rq / xs, -0.75 * rq / xs ** 2
        P = S * q * D
        if nder == 0:
            return P
        P1 = S1 * q * D + S * q1 * D + S * q * D1
        return P, P1

    def _int_P(self, a, b):
        """``int_a^b P`` split at the kinks of ``P``; log variable in the middle."""
        a, b = np.asarray(a, float), np.asarray(b, float)
        total = np.zeros(np.broadcast(a, b).shape)
        z, w = self._nodes, self._weights
        for lo, hi, logv in ((self.lam, 2 * self.lam, False), (2 * self.lam, self.ell, True),
                             (self.ell, self.Lam, False)):
            l = np.clip(a, lo, hi)[..., None]
            h = np.clip(b, lo, hi)[..., None]
            if logv:
                ll, lh = np.log(l), np.log(h)
                y = 0.5 * (lh - ll) * z + 0.5 * (lh + ll)
                xi = np.exp(y)
                total += np.sum(w * self._P(xi) * xi, axis=-1) * 0.5 * (lh - ll)[..., 0]
            else:
                xi = 0.5 * (h - l) * z + 0.5 * (h + l)
                total += np.sum(w * self._P(xi), axis=-1) * 0.5 * (h - l)[..., 0]
        return total

    def f(self, xi):
        xi = np.asarray(xi, dtype=float)
        lam = self.lam
        u = np.clip((xi - lam) / lam, 0.0, 1.0)
        S, S1 = _smoothstep9(u, 1)
        base = np.minimum(xi, lam) + lam * (u - _IS9(u))
        head = base - self.beta * self._int_P(np.full_like(xi, lam), xi)
        tail = self.beta * self._int_P(xi, np.full_like(xi, self.Lam))
        P, P1 = self._P(xi, 1)
        f = np.where(xi >= self.ell, tail, head)
        f1 = 1 - S - self.beta * P
        f2 = -S1 / lam - self.beta * P1
        past = xi >= self.Lam
        return (np.where(past, 0.0, f), np.where(past, 0.0, f1), np.where(past, 0.0, f2))


@dataclass
class CornerData:
    """Two fields meeting along ``x = x0``.

    ``inner`` is kept near the slice (and on the side ``direction*(x - x0) < 0``);
    ``outer`` is recovered at distance ``Lam`` on the side ``direction*(x - x0) > 0``.
    Both must be defined on ``[x0, x0 + direction*Lam]``.  ``domain`` is the
    x-interval of the assembled metric.
    """

    inner: Field
    outer: Field
    x0: float
    direction: float
    domain: tuple
    label: str = "corner"

    def xi(self, x):
        return self.direction * (np.asarray(x, dtype=float) - self.x0)


def corner_sample(lam, Lam, npts=400):
    """Distances ``xi`` in ``(0, Lam)`` resolving both the ``lam`` and ``Lam`` scales."""
    near = np.linspace(0.0, 3 * lam, npts // 2 + 1)[1:]
    far = np.geomspace(3 * lam, Lam, npts // 2 + 1)[:-1]
    return np.unique(np.concatenate([near, far]))


def corner_jump(corner):
    """``(max tensor mismatch, H_inner - H_outer)`` on the slice, normal along ``+xi``."""
    x = np.array([corner.x0])
    vi, vo = corner.inner.values(x), corner.outer.values(x)
    scale = [max(1.0, float(np.max(np.abs(a)))) for a in vo]
    mismatch = max(float(np.max(np.abs(a - b))) / sc for a, b, sc in zip(vi, vo, scale))
    with np.errstate(divide="ignore", invalid="ignore"):
        jump = (corner.inner.mean_curvature(x, corner.direction)
                - corner.outer.mean_curvature(x, corner.direction))[0]
    return mismatch, jump


def mollify_corner(corner, Lam, eps=None, floor=None, lam0=None, halvings=40, npts=400,
                   match_tol=1e-10, jump_tol=1e-12, tail=False, shrink=2.0, patience=3):
    """Smooth the corner: ``inner`` near the slice, ``outer`` beyond ``Lam``.

    ``lam`` starts at ``lam0`` (default ``Lam / 8``) and is divided by
    ``shrink`` (stopping early after ``patience`` steps whose deficit sits
    within ``10 lam`` of the slice and keeps growing) until, on
    the sample, ``R >= min(R_inner, R_outer) - eps`` and, if ``floor`` is
    given, ``R > floor`` on the blended rows.  ``eps`` defaults to ``1e-3 n (n - 1)``.  ``tail``
    selects :class:`TailRamp`, for inner metrics that are only ``C^{1,1/2}``
    at the slice.

    Returns
    -------
    field : PiecewiseField
        Rows with ``xi >= Lam`` come from ``outer`` verbatim, rows with
        ``xi <= lam`` from ``inner`` verbatim.
    cert : dict

    Raises
    ------
    ContractViolation
        Metrics differ on the slice, or ``H_inner <= H_outer`` somewhere.  A jump
        that vanishes identically (within ``jump_tol``) is accepted: the corner
        is then ``C^1`` and the blend only has to stay within ``eps``.
    ExhaustionError
        No ``lam`` certifies.
    """
    n = corner.outer.k + 2
    eps = 1e-3 * n * (n - 1) if eps is None else float(eps)
    mismatch, jump = corner_jump(corner)
    details = {"mismatch": mismatch, "min_jump": float(np.min(jump))}
    if mismatch > match_tol:
        raise ContractViolation("metrics differ on the slice", details)
    zero_jump = bool(np.all(np.abs(jump) <= jump_tol))
    if not zero_jump and not np.all(jump > jump_tol):
        raise ContractViolation("mean curvature jump has the wrong sign", details)
    lam = Lam / 8 if lam0 is None else float(lam0)
    trace = []
    for _ in range(halvings):
        ramp = TailRamp(lam, Lam) if tail else Ramp(lam, Lam)
        blend = BlendField(corner.inner, corner.outer, corner.x0, corner.direction, ramp,
                           label=f"{corner.label}:blend")
        xi = corner_sample(lam, Lam, npts)
        x = corner.x0 + corner.direction * xi
        R = blend.curvature(x)
        ref = np.minimum(corner.inner.curvature(x), corner.outer.curvature(x))
        bmn = float(np.min(R - ref))
        ok = bmn >= -eps
        worst = R - ref + eps
        above = None
        if floor is not None:
            # rows with xi <= lam are the inner metric verbatim, certified on their own
            rows = xi > lam
            above = float(np.min(R[rows] - floor))
            ok = ok and above > 0
            worst = np.where(rows[:, None], np.minimum(worst, R - floor), worst)
        where = float(xi[np.argmin(np.min(worst, axis=1))])
        trace.append({"lam": lam, "bmn_margin": bmn, "floor_margin": above, "worst_xi": where})
        if ok:
            cert = {"lam": lam, "Lam": Lam, "a": ramp.a, "tail": bool(tail), "eps": eps, "bmn_margin": bmn,
                    "floor_margin": above, "mismatch": mismatch,
                    "min_jump": float(np.min(jump)), "zero_jump": zero_jump, "samples": int(xi.size), "trace": trace}
            return _assemble_corner(corner, blend), cert
        # a deficit next to the slice that grows as lam shrinks will not recover
        recent = trace[-patience:]
        if len(recent) == patience and all(r["worst_xi"] < 10 * r["lam"] for r in recent):
            m = [min(r["bmn_margin"] + eps, np.inf if r["floor_margin"] is None else r["floor_margin"])
                 for r in recent]
            if all(b < a for a, b in zip(m, m[1:])):
                break
        lam /= shrink
    raise ExhaustionError(f"{corner.label}: no ramp width certifies", {"trace": trace, **details})


def _assemble_corner(corner, blend):
    lo, hi = corner.domain
    d, x0 = corner.direction, corner.x0
    lam, Lam = blend.ramp.lam, blend.ramp.Lam
    ends = sorted([x0 + d * lam, x0 + d * Lam])
    if d > 0:
        pieces = [(lo, hi, corner.outer), (x0 + lam, x0 + Lam, blend), (lo, x0 + lam, corner.inner)]
    else:
        pieces = [(lo, hi, corner.outer), (x0 - Lam, x0 - lam, blend), (x0 - lam, hi, corner.inner)]
    f = PiecewiseField(pieces, label=corner.label)
    f.blend_interval = tuple(ends)
    return f


def _sphere_b(rho, theta0):
    def b(x):
        th = x / rho + theta0
        return rho * np.sin(th), np.cos(th), -np.sin(th) / rho
    return b


def round_cap_corner(n, rho_inner=2.0, rho_outer=1.0, s=None, swap=False):
    """Two round caps sharing a sphere of radius 1 at ``x = 0``.

    The inner cap has radius ``rho_inner`` and reaches the slice before its
    equator, so its slice is more convex than the outer equator.
    ``swap=True`` exchanges the roles and produces a wrong-sign corner.
    """
    s = np.linspace(0.2, math.pi - 0.2, 5) if s is None else s
    th_in = math.asin(1.0 / rho_inner)
    th_out = math.asin(1.0 / rho_outer)
    inner = WarpedField(n - 2, s, _sphere_b(rho_inner, th_in), label=f"cap({rho_inner:g})")
    outer = WarpedField(n - 2, s, _sphere_b(rho_outer, th_out), label=f"cap({rho_outer:g})")
    if swap:
        inner, outer = outer, inner
    lo = -rho_inner * th_in if not swap else -rho_outer * th_out
    hi = min(rho_outer * (math.pi - th_out), rho_inner * (math.pi - th_in))
    return CornerData(inner, outer, 0.0, 1.0, (lo, hi), label="round caps")


# ---------------------------------------------------------------- totally geodesic boundary


class FieldAdapter(Field):
    """Wrap any object exposing ``k``, ``s`` and ``jets(x)``."""

    def __init__(self, obj, label="adapted"):
        super().__init__(obj.k, obj.s, label)
        self.obj = obj

    def jets(self, x):
        return self.obj.jets(np.atleast_1d(np.asarray(x, dtype=float)))

    def offset_jets(self, x):
        if not hasattr(self.obj, "offset_jets"):
            return None
        return self.obj.offset_jets(np.atleast_1d(np.asarray(x, dtype=float)))


def as_field(metric, t=None):
    """A :class:`Field` from a field, a pipeline result or a deformed field."""
    if isinstance(metric, Field):
        return metric
    if hasattr(metric, "solution") and hasattr(metric, "grid"):
        from .perturb2d import DeformedField

        return FieldAdapter(DeformedField(metric, t), label="G")
    if hasattr(metric, "jets") and hasattr(metric, "s"):
        return FieldAdapter(metric, label=getattr(metric, "label", "G"))
    raise DomainError(f"cannot read {type(metric).__name__} as a reduced metric")


def boundary_report(space, metric, s=None):
    """Mismatch with ``g_m`` and second fundamental form on both horizons."""
    L = space.profile.L
    ref = StaticField(space, metric.s)
    xb = np.array([0.0, L])
    with np.errstate(divide="ignore", invalid="ignore"):
        vm, vr = metric.values(xb), ref.values(xb)
        ks, kf = metric.principal_curvatures(xb, 1.0)
    mismatch = max(float(np.max(np.abs(a - b))) for a, b in zip(vm, vr))
    second = float(max(np.max(np.abs(ks)), np.max(np.abs(kf))))
    return {"boundary_metric_error": mismatch, "boundary_second_fundamental_form": second}


def _certify_grid(metric, x, target, strict=True):
    R = metric.curvature(x)
    margin = R - target
    return {"min_R_margin": float(np.min(margin)),
            "max_R_margin": float(np.max(margin)),
            "passed": bool(np.min(margin) > 0 if strict else np.min(margin) >= 0),
            "points": int(margin.size)}


def _blend_width(G, x0, d, w, target, npts=60):
    """Largest ``Lam <= w`` over which ``R_G - target`` keeps half its boundary value."""
    xi = np.geomspace(w * 1e-4, w, npts)
    m = (G.curvature(x0 + d * xi) - target).min(axis=1)
    if m[0] <= 0:
        raise CertificationError("outer metric has no curvature margin at the horizon",
                                 {"margin": float(m[0])})
    bad = np.nonzero(m < 0.5 * m[0])[0]
    return float(w if bad.size == 0 else xi[max(bad[0] - 1, 0)])


def theorem_main0(space, metricG, collar=None, t=None, eps=None, grid=None, t_decades=12,
                  shrink=3.0, halvings=20):
    """Glue the conformal collar metric to ``metricG`` near both horizons.

    ``metricG`` is a pipeline result (or any field) with positive mean
    curvature on the boundary.  The result equals the collar metric
    ``(1 - t v^{3/2}) g_m`` near ``x = 0`` and ``x = L`` and ``metricG``
    away from them.

    The collar factor is only ``C^{1,1/2}`` at the horizons, and its cost
    in the blend scales with ``t``, so ``t`` is searched by decades from the
    largest value the collar certificate allows; ``lam`` is searched inside
    :func:`mollify_corner`.

    Certificate: ``R > n(n-1)`` on the interior grid (the collar metric has
    ``R -> +inf`` at the horizons, so the boundary rows are excluded),
    boundary metric ``g_m`` within 1e-10 and boundary second fundamental
    form below 1e-8.

    Raises
    ------
    ExhaustionError
        If no ``t`` certifies.
    CertificationError
        If the final certificate fails; ``details`` holds it.
    """
    G = as_field(metricG)
    n, L = space.n, space.profile.L
    target = n * (n - 1)
    if collar is not None and not collar > 0:
        raise ExhaustionError("empty gluing collar", {"collar": collar})
    _, pcert = prop42_metric(space, t=t, collar_width=collar)
    w = pcert["collar_width"]
    sides = [("-", 0.0, 1.0), ("+", L, -1.0)]
    widths = {side: _blend_width(G, x0, d, w, target) for side, x0, d in sides}
    trace = []
    for j in range(t_decades):
        tt = pcert["t"] * 10.0 ** (-j)
        try:
            _, tcert = prop42_metric(space, t=tt, collar_width=w)
        except ExhaustionError:
            trace.append({"t": tt, "failed": "collar"})
            continue
        gt = prop42_field(space, tt, G.s)
        pieces, corners = [(0.0, L, G)], {}
        try:
            for i, (side, x0, d) in enumerate(sides):
                current = i
                corner = CornerData(gt, G, x0, d, (0.0, L), label=f"main0{side}")
                Lam = widths[side]
                glued, ccert = mollify_corner(corner, Lam, eps=eps, floor=target, tail=True,
                                              lam0=Lam * 1e-2, shrink=shrink, halvings=halvings)
                pieces += glued.pieces[1:]
                corners[side] = ccert
        except ExhaustionError as exc:
            trace.append({"t": tt, "failed": str(exc)})
            sides.insert(0, sides.pop(current))  # try the binding side first next time
            continue
        break
    else:
        raise ExhaustionError("no collar parameter certifies the glued metric", {"trace": trace})
    out = PiecewiseField(pieces, label="main0")
    if grid is None:
        grid = getattr(metricG, "grid", None)
    xg = grid.x if grid is not None else L * 0.5 * (1 - np.cos(np.linspace(0, np.pi, 257)))
    samples = [xg[(xg > 0) & (xg < L)]]
    for side, c in corners.items():
        xi = corner_sample(c["lam"], c["Lam"])
        samples.append(xi if side == "-" else L - xi)
    x = np.unique(np.concatenate(samples))
    cert = {"t": tt, "collar": tcert, "corners": corners, "search": trace,
            "R": _certify_grid(out, x, target), **boundary_report(space, out)}
    cert["passed"] = bool(cert["R"]["passed"] and cert["boundary_metric_error"] <= 1e-10
                          and cert["boundary_second_fundamental_form"] <= 1e-8)
    if not cert["passed"]:
        raise CertificationError("glued metric failed its certificate", cert)
    return out, cert


# ---------------------------------------------------------------- conformal flow


def _leibniz(a, b):
    a0, a1, a2, a3 = a
    b0, b1, b2, b3 = b
    return (a0 * b0, a1 * b0 + a0 * b1, a2 * b0 + 2 * a1 * b1 + a0 * b2,
            a3 * b0 + 3 * a2 * b1 + 3 * a1 * b2 + a0 * b3)


@dataclass
class FlowState:
    """Flow of ``W`` from ``x`` for time ``t``, stored as offsets.

    ``X = x + D``, ``X' = 1 + Z1``; ``X''``, ``X'''`` are x-derivatives and
    ``log_theta`` integrates ``2 psi v`` along the orbit.
    """

    x: np.ndarray
    t: float
    D: np.ndarray
    Z1: np.ndarray
    X2: np.ndarray
    X3: np.ndarray
    log_theta: np.ndarray

    @property
    def X(self):
        return self.x + self.D

    @property
    def X1(self):
        return 1.0 + self.Z1


class ConformalFlow:
    """``Y = r d/dx`` (that is ``r v d/dr``), ``W = (psi_+ - psi_-) Y`` and the flow of ``W``.

    ``psi_-`` is 1 on ``[0, w]`` and ``psi_+`` on ``[L - w, L]``; both vanish
    beyond ``2w`` from their horizon.  On those collars ``W = +-Y``, which is
    conformal Killing for ``g_m`` (``L_Y g_m = 2 v g_m``), so the flow pulls
    ``g_m`` back to ``theta g_m`` with ``theta = (r(X)/r(x))^2``.

    Iterating gives ``(Y, W, flow_map, theta)``.
    """

    def __init__(self, space, width=None, rtol=1e-12):
        self.space = space
        self.L = space.profile.L
        self.w = self.L / 8 if width is None else float(width)
        if not 0 < 4 * self.w < self.L:
            raise DomainError(f"cutoff width {self.w} needs 0 < 4w < L")
        self.rtol = rtol

    def __iter__(self):
        return iter((self.Y, self.W, self.flow_map, self.theta))

    def psi(self, x):
        """``psi_+ - psi_-`` and three derivatives."""
        w, L = self.w, self.L
        x = np.asarray(x, dtype=float)
        p = _smoothstep9((x - (L - 2 * w)) / w, 3)
        m = _smoothstep9((x - w) / w, 3)
        return (p[0] + m[0] - 1.0, (p[1] + m[1]) / w, (p[2] + m[2]) / w ** 2,
                (p[3] + m[3]) / w ** 3)

    def Y(self, x):
        """Component of ``Y`` along ``d/dx``."""
        return self.space.profile.r(x)

    def W(self, x):
        """``W`` along ``d/dx`` with three derivatives."""
        return _leibniz(self.psi(x), self.space.profile.jets(x))

    def _rhs(self, N):
        def rhs(_, y):
            D, Z1, X2, X3, _lt = y.reshape(5, N)
            X = self._x + D
            W0, W1, W2, W3 = self.W(X)
            X1 = 1.0 + Z1
            ps = self.psi(X)[0]
            v = self.space.profile.jets(X)[1]
            return np.concatenate([W0, W1 * X1, W2 * X1 * X1 + W1 * X2,
                                   W3 * X1 ** 3 + 3 * W2 * X1 * X2 + W1 * X3, 2 * ps * v])
        return rhs

    def flow(self, x, t):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        N = x.size
        z = np.zeros(N)
        if t == 0:
            return FlowState(x, 0.0, z, z.copy(), z.copy(), z.copy(), z.copy())
        self._x = x
        sol = solve_ivp(self._rhs(N), (0.0, float(t)), np.zeros(5 * N), method="DOP853",
                        rtol=self.rtol, atol=1e-15 * abs(float(t)))
        if not sol.success:
            raise NumericalError(f"flow integration failed: {sol.message}")
        D, Z1, X2, X3, lt = sol.y[:, -1].reshape(5, N)
        return FlowState(x, float(t), D, Z1, X2, X3, lt)

    def flow_map(self, x, t):
        return self.flow(x, t).X

    def theta(self, x, t):
        return np.exp(self.flow(x, t).log_theta)

    # checks

    def check_norm(self, npts=100, seed=0):
        """``|Y|_{g_m} = r`` in the ``r`` chart: ``(r v)^2 / V = r^2``."""
        sp = self.space
        r = np.random.default_rng(seed).uniform(sp.r_minus, sp.r_plus, npts)
        V = sp.V(r)
        norm = np.sqrt((r * np.sqrt(V)) ** 2 / V)
        return float(np.max(np.abs(norm - r) / r))

    def check_lie(self, npts=100, seed=0, h=1e-4):
        """Finite-difference ``L_Y g_m`` against ``2 v g_m`` (relative).

        Uses the arclength chart, where ``g_m = dx^2 + r^2 g_S`` is regular up
        to the horizons; the ``r`` chart loses digits to cancellation there.
        """
        prof = self.space.profile
        x = np.random.default_rng(seed).uniform(0.0, self.L, npts)
        hs = h * self.L
        d5 = lambda f: (8 * (f(x + hs) - f(x - hs)) - (f(x + 2 * hs) - f(x - 2 * hs))) / (12 * hs)
        r, v = prof.jets(x)[:2]
        lie_xx = 2 * d5(self.Y)
        lie_sph = self.Y(x) * d5(lambda y: prof.r(y) ** 2)
        scale = np.maximum(np.abs(v), 1.0)
        return float(max(np.max(np.abs(lie_xx - 2 * v) / scale),
                         np.max(np.abs(lie_sph - 2 * v * r * r) / (scale * r * r))))

    def check_boundary_lie(self):
        """Components of ``L_W g_m`` on both horizons (arclength chart)."""
        xb = np.array([0.0, self.L])
        W0, W1, _, _ = self.W(xb)
        r, r1, _, _ = self.space.profile.jets(xb)
        return float(np.max(np.abs(np.concatenate([2 * W1, 2 * W0 * r * r1]))))

    def collar_points(self, npts=50, seed=0):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0.05 * self.w, 0.5 * self.w, npts // 2)
        return np.concatenate([a, self.L - rng.uniform(0.05 * self.w, 0.5 * self.w, npts - npts // 2)])

    def check_theta_rate(self, npts=50, seed=0, h=1e-6):
        """``d theta / dt`` at 0 against ``2 psi v`` (``psi = +-1`` on the collars)."""
        x = self.collar_points(npts, seed)
        rate = (np.exp(self.flow(x, h).log_theta) - np.exp(self.flow(x, -h).log_theta)) / (2 * h)
        target = 2 * self.psi(x)[0] * self.space.profile.jets(x)[1]
        return float(np.max(np.abs(rate - target)))

    def check_pullback(self, t, npts=50, seed=0):
        """Relative gap between ``Psi_t^* g_m`` and ``theta g_m`` on the collars."""
        x = self.collar_points(npts, seed)
        st = self.flow(x, t)
        th = np.exp(st.log_theta)
        rX = self.space.profile.r(st.X)
        r = self.space.profile.r(x)
        return float(max(np.max(np.abs(st.X1 ** 2 - th) / th),
                         np.max(np.abs(rX ** 2 - th * r * r) / (th * r * r))))

    def certificate(self, t=1e-3, npts=100, seed=0):
        cert = {"norm": self.check_norm(npts, seed), "lie": self.check_lie(npts, seed),
                "boundary_lie": self.check_boundary_lie(),
                "theta_rate": self.check_theta_rate(min(npts, 50), seed),
                "pullback": self.check_pullback(t, min(npts, 50), seed)}
        cert["passed"] = bool(cert["norm"] <= 1e-8 and cert["lie"] <= 1e-8
                              and cert["boundary_lie"] <= 1e-8 and cert["theta_rate"] <= 1e-6
                              and cert["pullback"] <= 1e-8)
        return cert


def conformal_flow(space, width=None):
    """The conformal field, its cut-off version and the flow (see :class:`ConformalFlow`)."""
    return ConformalFlow(space, width)


# ---------------------------------------------------------------- assembly plan


def _conformal_power(n):
    return 4.0 / (n - 2)


def _log_bump(delta, n):
    """``log (1 - exp(-1/delta))^q``."""
    return _conformal_power(n) * math.log1p(-math.exp(-1.0 / delta))


def _r_shift(prof, x, D):
    """``r(x + D) - r(x)`` without cancellation for small ``D``."""
    x, D = np.asarray(x, dtype=float), np.asarray(D, dtype=float)
    r, r1, r2, r3 = prof.jets(x)
    small = np.abs(D) < 1e-4
    return np.where(small, D * (r1 + D * (r2 / 2 + D * r3 / 6)), prof.r(x + D) - r)


@dataclass
class AssemblyPlan:
    """Level sets, flow time and conformal constants for one ``delta_+``.

    ``x[(side, i)]`` is the point near horizon ``side`` where ``v = i delta_side``;
    ``c[side] - 1`` is stored exactly in ``c_minus_one``.  On the collars the
    flow is explicit, ``X' = r(X)/r(x)``, so ``theta`` at the seams comes from
    ``seam_shift = X'(x_{2 delta}) - 1`` with ``X(x_{2 delta})`` the horizon;
    ``log_theta_flow`` is the integrated value, kept as a check.
    """

    space: object
    flow: ConformalFlow
    delta: dict
    t: float
    x: dict
    r: dict
    log_theta: dict
    log_theta_flow: dict
    seam_shift: dict
    c_minus_one: dict
    residual: float
    ordered: bool
    x_star: float

    @property
    def delta_plus(self):
        return self.delta["+"]

    @property
    def delta_minus(self):
        return self.delta["-"]

    @property
    def c(self):
        return {sd: 1.0 + self.c_minus_one[sd] for sd in SIDES}

    def theta_minus_one(self, x):
        """``Theta - 1`` with two derivatives; ``Theta`` is ``c_-`` near ``r_-``, ``c_+`` near ``r_+``."""
        r, r1, r2 = self.space.profile.jets(x)[:3]
        lo, hi = self.r[("-", 3)], self.r[("+", 3)]
        S, S1, S2 = _smoothstep9((r - lo) / (hi - lo), 2)
        dc = self.c_minus_one["+"] - self.c_minus_one["-"]
        u1 = r1 / (hi - lo)
        return (self.c_minus_one["-"] + dc * S, dc * S1 * u1,
                dc * (S2 * u1 * u1 + S1 * r2 / (hi - lo)))

    def summary(self):
        return {"delta_plus": self.delta["+"], "delta_minus": self.delta["-"], "t": self.t,
                "x": {f"{sd}{i}": self.x[(sd, i)] for sd in SIDES for i in (1, 2, 3)},
                "c": self.c, "log_theta": dict(self.log_theta),
                "log_theta_flow": dict(self.log_theta_flow), "residual": self.residual,
                "ordered": self.ordered}


def assembly_plan(space, delta_plus, flow=None, tol=1e-10):
    """Shoot for ``t_delta`` and ``delta_-`` given ``delta_+``.

    ``t_delta`` is the time the flow needs to carry ``{v = 2 delta_+}`` onto
    ``r_+``; ``delta_-`` is then fixed by requiring the same time to carry
    ``{v = 2 delta_-}`` onto ``r_-``.  Both hits are verified by integrating
    the flow (residual at most ``tol``).
    """
    flow = conformal_flow(space) if flow is None else flow
    prof = space.profile
    L, w = prof.L, flow.w
    x_star = float(prof.x_of_r(space.r_star))
    v = lambda x: float(prof.jets(np.array([x]))[1][0])

    def level(val, side):
        a, b = (x_star, L) if side == "+" else (0.0, x_star)
        if not 0 < val < v(x_star):
            raise DomainError(f"level v={val} not attained")
        return brentq(lambda x: v(x) - val, a, b, xtol=1e-15, rtol=1e-15, maxiter=200)

    delta = {"+": float(delta_plus)}
    x = {("+", i): level(i * delta["+"], "+") for i in (1, 2, 3)}
    if x[("+", 3)] <= L - w:
        raise DomainError(f"delta_+={delta_plus} too large: v=3 delta_+ outside the conformal collar")
    inv_r = lambda y: 1.0 / prof.r(np.array([y]))[0]
    t = quad(inv_r, x[("+", 2)], L, epsabs=0.0, epsrel=1.2e-14, limit=200)[0]
    with warnings.catch_warnings():
        # quad flags roundoff near full precision; the flow residual below is the real check
        warnings.simplefilter("ignore", IntegrationWarning)
        x2m = brentq(lambda y: quad(inv_r, 0.0, y, epsabs=0.0, epsrel=1.2e-14)[0] - t, 0.0, w,
                     xtol=1e-16, rtol=1e-15, maxiter=200)
    delta["-"] = v(x2m) / 2
    x[("-", 2)] = x2m
    for i in (1, 3):
        x[("-", i)] = level(i * delta["-"], "-")
    if x[("-", 3)] >= w:
        raise DomainError(f"delta_-={delta['-']} too large: v=3 delta_- outside the conformal collar")
    ends = np.array([x[("-", 2)], x[("+", 2)]])
    st = flow.flow(ends, t)
    residual = float(max(abs(st.X[0] - 0.0), abs(st.X[1] - L)))
    if residual > tol:
        raise CertificationError(f"shooting residual {residual:.3e} > {tol:.1e}",
                                 {"residual": residual, "t": t, "delta": delta})
    log_theta_flow = {"-": float(st.log_theta[0]), "+": float(st.log_theta[1])}
    shift = {sd: float(_r_shift(prof, ends[j], (0.0, L)[j] - ends[j]) / prof.r(ends[j:j + 1])[0])
             for j, sd in enumerate(SIDES)}
    log_theta = {sd: 2 * math.log1p(shift[sd]) for sd in SIDES}
    c1 = {sd: math.expm1(_log_bump(delta[sd], space.n) - log_theta[sd]) for sd in SIDES}
    seq = [x[("-", i)] for i in (1, 2, 3)] + [x[("+", i)] for i in (3, 2, 1)]
    ordered = bool(0 < seq[0] and all(a < b for a, b in zip(seq, seq[1:])) and seq[-1] < L)
    r = {key: float(prof.r(np.array([val]))[0]) for key, val in x.items()}
    return AssemblyPlan(space, flow, delta, t, x, r, log_theta, log_theta_flow, shift, c1,
                        residual, ordered, x_star)


# ---------------------------------------------------------------- the two delta metrics


def _compose(jet, X1, X2):
    """Jet of ``c(X(x), s)`` from the jet of ``c`` at ``X``."""
    c = jet.c
    return Jet(2, {(0, 0): c[(0, 0)], (1, 0): c[(1, 0)] * X1, (0, 1): c[(0, 1)],
                   (2, 0): c[(2, 0)] * X1 * X1 + c[(1, 0)] * X2, (1, 1): c[(1, 1)] * X1,
                   (0, 2): c[(0, 2)]})


class DeltaField(Field):
    """``g_delta = Theta * Psi_t^* G`` for an :class:`AssemblyPlan`.

    :meth:`offset_jets` returns ``g_delta - g_m`` without cancellation: the
    flow is integrated as offsets and ``Theta - 1`` is kept exact.
    """

    def __init__(self, base, plan, label="g_delta", taylor_radius=1e-5):
        super().__init__(base.k, base.s, label)
        self.base, self.plan = base, plan
        self.anchors = np.array([plan.x[("-", 2)], plan.x[("+", 2)]])
        self.anchor_state = plan.flow.flow(self.anchors, plan.t)
        self.taylor_radius = taylor_radius

    def _state(self, x):
        """Flow offsets at ``x``, made exact where the flow is explicit.

        On the collars ``X' = r(X)/r(x)``.  Near a seam ``X`` is a cubic in
        ``x - x_{2 delta}`` taking the horizon value exactly at the seam: the
        integrator's roundoff is not smooth in ``x`` and any value mismatch at
        the seam is multiplied by ``1/lam^2`` in the blend.
        """
        plan = self.plan
        prof = plan.space.profile
        L, w = prof.L, plan.flow.w
        st = plan.flow.flow(x, plan.t)
        D, Z1, X2, X3 = st.D.copy(), st.Z1.copy(), st.X2.copy(), st.X3.copy()
        X = st.X
        a = self.anchor_state
        for j, (x0, b, sd) in enumerate(zip(self.anchors, (0.0, L), SIDES)):
            h = x - x0
            near = np.abs(h) < self.taylor_radius
            if not near.any():
                continue
            h = h[near]
            z1 = plan.seam_shift[sd]
            poly = h * (z1 + h * (a.X2[j] / 2 + h * a.X3[j] / 6))
            D[near] = (b - x0) + poly
            X[near] = b + h + poly
            X2[near] = a.X2[j] + h * a.X3[j]
            X3[near] = a.X3[j]
        collar = (x <= w) | (x >= L - w)
        Z1[collar] = _r_shift(prof, x[collar], D[collar]) / prof.r(x[collar])
        st = FlowState(x, st.t, D, Z1, X2, X3, st.log_theta)
        X = np.clip(X, 0.0, L)
        col = lambda v: v[:, None]
        return st, X, col(st.X1), col(st.X2), col(st.X3)

    def _pull(self, jets, X1, X2, X3):
        E, F, G, P = (_compose(j, X1, X2) for j in jets)
        sq = Jet.of_x([X1 * X1, 2 * X1 * X2, 2 * X2 * X2 + 2 * X1 * X3], 2)
        lin = Jet.of_x([X1, X2, X3], 2)
        return (E * sq).truncate(2), (F * lin).truncate(2), G, P

    def jets(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        _, X, X1, X2, X3 = self._state(x)
        pulled = self._pull(self.base.jets(X), X1, X2, X3)
        T = _x_jet([1.0 + self.plan.theta_minus_one(x)[0]] + list(self.plan.theta_minus_one(x)[1:]))
        return tuple((T * c).truncate(2) for c in pulled)

    def _static_gap(self, x, st, X1, X2, X3):
        """``Psi^* g_m - g_m`` as jets, exact in value."""
        prof = self.plan.space.profile
        r, r1, r2, r3 = prof.jets(x)
        R, R1, R2, _ = prof.jets(x + st.D)
        diff = _r_shift(prof, x, st.D)
        A = Jet.of_x([_col(diff * (R + r)), _col(2 * R * R1) * X1 - _col(2 * r * r1),
                    _col(2 * (R1 * R1 + R * R2)) * X1 * X1 + _col(2 * R * R1) * X2
                    - _col(2 * (r1 * r1 + r * r2))], 2)
        Z1 = st.Z1[:, None]
        dE = Jet.of_x([Z1 * (2 + Z1), 2 * X1 * X2, 2 * X2 * X2 + 2 * X1 * X3], 2)
        sn = _sin_jet(self.s)
        return dE, Jet.const(0.0, 2), A, (A * sn * sn).truncate(2)

    def offset_jets(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        st, X, X1, X2, X3 = self._state(x)
        boff = self.base.offset_jets(X)
        if boff is None:
            return None
        pulled_off = self._pull(boff, X1, X2, X3)
        gap = self._static_gap(x, st, X1, X2, X3)
        th = self.plan.theta_minus_one(x)
        T1 = _x_jet(th)
        T = _x_jet([1.0 + th[0]] + list(th[1:]))
        gm = StaticField(self.plan.space, self.s).jets(x)
        return tuple((T * (o + d) + T1 * m).truncate(2) for o, d, m in zip(pulled_off, gap, gm))


def _bump_parts(space, plan, x):
    """``(y, y', y'', eps, eps', eps'')`` with ``y = v - delta_side`` and ``eps = exp(-1/y)``.

    ``eps`` and its derivatives are 0 where ``y <= 0``.
    """
    r, r1, r2, r3 = space.profile.jets(x)
    delta = np.where(x < plan.x_star, plan.delta["-"], plan.delta["+"])
    y = r1 - delta
    inside = y > 0
    ys = np.where(inside, y, 1.0)
    e = np.where(inside, np.exp(-1.0 / ys), 0.0)
    a = r2 / ys ** 2
    e1 = e * a
    e2 = e * (a * a + r3 / ys ** 2 - 2 * r2 * r2 / ys ** 3)
    return y, r2, r3, e, e1, e2


def tilde_phi(space, plan, x):
    """``Omega - 1`` and two derivatives, ``Omega = (1 - exp(-1/(v - delta)))^q`` on ``M_delta``."""
    q = _conformal_power(space.n)
    _, _, _, e, e1, e2 = _bump_parts(space, plan, np.asarray(x, dtype=float))
    u = 1.0 - e
    p0 = np.expm1(q * np.log1p(-e))
    p1 = -q * u ** (q - 1) * e1
    p2 = q * (q - 1) * u ** (q - 2) * e1 * e1 - q * u ** (q - 1) * e2
    return p0, p1, p2


def tilde_margin(space, plan, x):
    """``(R - n(n-1)) u^p / eps`` for ``Omega g_m``, ``u = 1 - eps``, in closed form.

    With ``Omega = u^{4/(n-2)}`` the conformal change of scalar curvature gives
    ``n(n-1) u (1 - u^q)/eps + c_n (eps'' + (n-1)(v/r) eps')/eps``, which stays
    finite when ``eps`` underflows.  Points with ``v <= delta`` return ``nan``.
    """
    n = space.n
    q = _conformal_power(n)
    cn = 4.0 * (n - 1) / (n - 2)
    x = np.asarray(x, dtype=float)
    r, v = space.profile.jets(x)[:2]
    y, y1, y2, e, _, _ = _bump_parts(space, plan, x)
    ys = np.where(y > 0, y, 1.0)
    ratio = np.where(e > 1e-300, -np.expm1(q * np.log1p(-e)) / np.where(e > 0, e, 1.0), q)
    lap = (y1 / ys ** 2) ** 2 + y2 / ys ** 2 - 2 * y1 * y1 / ys ** 3 + (n - 1) * (v / r) * y1 / ys ** 2
    out = n * (n - 1) * (1.0 - e) * ratio + cn * lap
    return np.where(y > 0, out, np.nan)


def _conformal_samples(plan, side, extend, npts):
    """Points of ``M_delta`` near horizon ``side`` from ``v = delta`` to ``x_{2 delta} + extend``."""
    L = plan.space.profile.L
    x1, x2 = plan.x[(side, 1)], plan.x[(side, 2)]
    span = abs(x2 - x1) + extend
    d = np.geomspace(span * 1e-9, span, npts)
    return x1 + d if side == "-" else np.clip(x1 - d, 0.0, L)


def tilde_g_delta(space, plan, s, extend=0.0, npts=400):
    """``g_m`` conformally bent by ``(1 - exp(-1/(v - delta_+-)))^{4/(n-2)}`` on ``M_delta``.

    The factor is 1 to all orders at ``v = delta`` so the field equals
    ``g_m`` bitwise outside ``M_delta``.  The certificate evaluates the
    closed-form curvature margin (positive means ``R > n(n-1)``) from the seam
    out to ``x_{2 delta} + extend`` on each side and checks flatness at the seam.
    """
    field = ConformalField(StaticField(space, s), label="tilde_g_delta",
                           phi=lambda x: tilde_phi(space, plan, x))
    ext = extend if isinstance(extend, dict) else {sd: float(extend) for sd in SIDES}
    cert = {"margin": {}, "seam_flatness": {}, "consistency": {}}
    for sd in SIDES:
        xs = _conformal_samples(plan, sd, ext[sd], npts)
        m = tilde_margin(space, plan, xs)
        cert["margin"][sd] = float(np.nanmin(m))
        x1 = plan.x[(sd, 1)]
        near = x1 + (1 if sd == "-" else -1) * abs(plan.x[(sd, 2)] - x1) * np.geomspace(1e-6, 1e-2, 20)
        cert["seam_flatness"][sd] = float(max(np.max(np.abs(c)) for c in tilde_phi(space, plan, near)))
        # compare with numerical curvature where eps is representable and R - n(n-1) resolvable
        y = _bump_parts(space, plan, xs)[0]
        e = np.exp(-1.0 / np.where(y > 0, y, 1e-3))
        keep = (e > 1e-6) & (e < 1e-2)
        if keep.any():
            n = space.n
            u = 1.0 - e[keep]
            Rn = field.curvature(xs[keep])[:, 0]
            scaled = (Rn - n * (n - 1)) * u ** ((n + 2) / (n - 2)) / e[keep]
            cert["consistency"][sd] = float(np.max(np.abs(scaled - m[keep]) / np.abs(m[keep])))
    cert["passed"] = bool(all(v > 0 for v in cert["margin"].values())
                          and all(v <= 1e-8 for v in cert["seam_flatness"].values()))
    return field, cert


class GluedMetric(PiecewiseField):
    """Output of :func:`theorem_main`: pieces plus what is needed to certify rows.

    :meth:`region_margin` classifies rows as ``static`` (``g_m`` bitwise,
    margin 0 by identity), ``conformal`` (closed-form margin, positive) or
    ``numeric`` (``R - n(n-1)`` from the curvature kernel).
    """

    def __init__(self, pieces, space, plan, tilde, label="main"):
        super().__init__(pieces, label)
        self.space, self.plan, self.tilde = space, plan, tilde
        self.length = space.profile.L

    def region_margin(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        space, plan = self.space, self.plan
        target = space.n * (space.n - 1)
        own = self.owner(x)
        label = np.array([self.pieces[i][2].label for i in own])
        y = _bump_parts(space, plan, x)[0]
        kind = np.where(label == self.tilde.label, np.where(y <= 0, "static", "conformal"), "numeric")
        margin = np.zeros(x.size)
        conf = kind == "conformal"
        if conf.any():
            margin[conf] = tilde_margin(space, plan, x[conf])
        num = kind == "numeric"
        if num.any():
            margin[num] = (self.curvature(x[num]) - target).min(axis=1)
        return kind, margin


def _region_certificate(out, x):
    """Certify ``R >= n(n-1)`` region by region (see :meth:`GluedMetric.region_margin`).

    Static rows must also equal ``g_m`` bitwise; numerical rows must clear
    ``n(n-1)`` strictly.
    """
    kind, margin = out.region_margin(x)
    cert = {"rows": {k: int(np.sum(kind == k)) for k in ("static", "conformal", "numeric")}}
    static = kind == "static"
    ref = StaticField(out.space, out.s)
    xs = x[static]
    cert["static_exact"] = bool(all(np.array_equal(a, b) for pa, pb in zip(out.arrays(xs), ref.arrays(xs))
                                    for a, b in zip(pa, pb)))
    conf, num = kind == "conformal", kind == "numeric"
    cert["conformal_margin"] = float(margin[conf].min()) if conf.any() else math.inf
    cert["numeric_margin"] = float(margin[num].min())
    cert["numeric_worst_x"] = float(x[num][int(np.argmin(margin[num]))])
    cert["passed"] = bool(cert["static_exact"] and cert["conformal_margin"] > 0
                          and cert["numeric_margin"] > 0)
    return cert


def _seam_report(gt, gd, sides):
    """Seam equality and the mean curvature comparison on ``{v = 2 delta}``.

    ``H`` uses the normal leaving ``M_{2 delta}``; the comparison asks
    ``sup H_tilde < inf H_delta`` over the slice.
    """
    out = {}
    for sd, x0, d in sides:
        x = np.array([x0])
        a, b = gt.values(x), gd.values(x)
        match = max(float(np.max(np.abs(u - v))) for u, v in zip(a, b))
        with np.errstate(divide="ignore", invalid="ignore"):
            ht = gt.mean_curvature(x, -d)[0]
            hd = gd.mean_curvature(x, -d)[0]
        out[sd] = {"match": match, "sup_H_tilde": float(np.max(ht)), "inf_H_delta": float(np.min(hd)),
                   "strict": bool(np.max(ht) < np.min(hd))}
    return out


def theorem_main(space, metricG, delta_plus=1e-4, eps=None, grid=None, halvings=30, width=None,
                 lam_halvings=40, shrink=4.0):
    """Replace ``metricG`` near the horizons by ``g_m`` while keeping ``R >= n(n-1)``.

    Layers, from the horizon inward: ``g_m`` where ``v <= delta``, the
    conformal bend :func:`tilde_g_delta`, a mollified corner at
    ``v = 2 delta``, and ``g_delta = Theta Psi^* G`` inside.  ``delta_+``
    is halved until both corners satisfy the mean curvature contract and
    mollify; ``delta_-`` follows from :func:`assembly_plan`.

    Returns ``(field, cert)``; ``field`` is ``g_m`` bitwise outside
    ``M_delta``.

    Raises
    ------
    ExhaustionError
        If no ``delta_+`` in the halving sequence works.
    CertificationError
        If the region-wise certificate fails.
    """
    G = as_field(metricG)
    n, L = space.n, space.profile.L
    target = n * (n - 1)
    flow = conformal_flow(space, width)
    s = G.s
    trace = []
    delta = float(delta_plus)
    for _ in range(halvings):
        try:
            plan = assembly_plan(space, delta, flow)
        except DomainError as exc:
            trace.append({"delta_plus": delta, "failed": str(exc)})
            delta /= 2
            continue
        gd = DeltaField(G, plan)
        sides = [("-", plan.x[("-", 2)], 1.0), ("+", plan.x[("+", 2)], -1.0)]
        try:
            widths = {sd: _blend_width(gd, x0, d, flow.w / 2, target) for sd, x0, d in sides}
        except CertificationError as exc:
            trace.append({"delta_plus": delta, "failed": str(exc)})
            delta /= 2
            continue
        gt, tcert = tilde_g_delta(space, plan, s, extend=widths)
        if not tcert["passed"]:
            trace.append({"delta_plus": delta, "failed": "conformal margin", "tilde": tcert})
            delta /= 2
            continue
        seams = _seam_report(gt, gd, sides)
        if not all(v["strict"] for v in seams.values()):
            trace.append({"delta_plus": delta, "failed": "mean curvature comparison", "seams": seams})
            delta /= 2
            continue
        pieces = [(0.0, L, gt), (plan.x[("-", 2)], plan.x[("+", 2)], gd)]
        corners = {}
        try:
            for sd, x0, d in sides:
                corner = CornerData(gt, gd, x0, d, (0.0, L), label=f"main{sd}")
                Lam = widths[sd]
                glued, ccert = mollify_corner(corner, Lam, eps=eps, floor=target, lam0=Lam * 1e-2,
                                              halvings=lam_halvings, shrink=shrink)
                pieces += glued.pieces[1:]
                corners[sd] = ccert
        except (ContractViolation, ExhaustionError) as exc:
            trace.append({"delta_plus": delta, "failed": f"{type(exc).__name__}: {exc}"})
            delta /= 2
            continue
        break
    else:
        raise ExhaustionError("no delta_+ certifies the glued metric", {"trace": trace})
    out = GluedMetric(pieces, space, plan, gt)
    if grid is None:
        grid = getattr(metricG, "grid", None)
    xg = grid.x if grid is not None else L * 0.5 * (1 - np.cos(np.linspace(0, np.pi, 257)))
    samples = [xg]
    for sd, x0, d in sides:
        c = corners[sd]
        samples.append(x0 + d * corner_sample(c["lam"], c["Lam"]))
        samples.append(x0 - d * corner_sample(c["lam"], c["Lam"]))
        samples.append(_conformal_samples(plan, sd, 0.0, 60))
        x1 = plan.x[(sd, 1)]
        samples.append(np.clip(x1 - d * abs(x0 - x1) * np.geomspace(1e-3, 1.0, 20), 0.0, L))
    x = np.unique(np.clip(np.concatenate(samples), 0.0, L))
    cert = {"delta_plus": plan.delta["+"], "delta_minus": plan.delta["-"], "t": plan.t,
            "plan": plan.summary(), "tilde": tcert, "seams": seams, "corners": corners,
            "search": trace,
            "R": _region_certificate(out, x),
            **boundary_report(space, out)}
    cert["passed"] = bool(cert["R"]["passed"] and cert["tilde"]["passed"]
                          and all(v["match"] <= 1e-8 and v["strict"] for v in seams.values())
                          and cert["boundary_metric_error"] == 0.0
                          and cert["boundary_second_fundamental_form"] <= 1e-8)
    if not cert["passed"]:
        raise CertificationError("glued metric failed its certificate", cert)
    return out, cert


# ---------------------------------------------------------------- doubling and chains


class ChainField(Field):
    """``copies`` repetitions of ``period_field`` (defined on ``[0, period]``)."""

    def __init__(self, period_field, period, copies, label="chain"):
        super().__init__(period_field.k, period_field.s, label)
        self.period_field, self.period, self.copies = period_field, float(period), int(copies)
        self.length = self.period * self.copies

    def local(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < 0) or np.any(x > self.length):
            raise DomainError("point outside the chain")
        u = np.mod(x, self.period)
        # the right end of each period is the left end of the next; keep x = length inside
        u = np.where((u == 0) & (x > 0), self.period, u)
        return np.clip(u, 0.0, self.period)

    def jets(self, x):
        return self.period_field.jets(self.local(x))


def _odd_boundary_data(block, x):
    """Largest odd-in-x jet entry of ``block`` at ``x`` (0 for an even extension)."""
    E, F, G, P = block.jets(np.atleast_1d(x))
    odd = [E.c[(1, 0)], E.c[(1, 1)], G.c[(1, 0)], G.c[(1, 1)], P.c[(1, 0)], P.c[(1, 1)],
           F.c[(0, 0)], F.c[(0, 1)], F.c[(0, 2)], F.c[(2, 0)]]
    return float(max(np.max(np.abs(np.broadcast_to(a, (1, block.s.size)))) for a in odd))


def _block_length(block, length):
    if length is not None:
        return float(length)
    if hasattr(block, "length"):
        return float(block.length)
    if hasattr(block, "space"):
        return float(block.space.profile.L)
    raise DomainError("block length unknown; pass length=")


def chain_assemble(block, copies=1, length=None, s=None, eps=None, tol=1e-6, npts=200):
    """Double ``block`` across ``x = L`` and repeat the double ``copies`` times.

    ``block`` is a :class:`~horizon_forge.gkdss.GkdssSpace` (meaning
    ``g_m``), a :func:`theorem_main` output or another field on ``[0, L]``.
    Totally geodesic ends (odd jets vanish) reflect smoothly.  Otherwise each
    interface is a corner whose mean curvature jump ``2 H`` (outward normal)
    must be positive; it is then mollified.

    Certificate: period ``2L``, odd jets at the ends (an even extension is
    then smooth), ``|R - n(n-1)|`` next to the interfaces for ``g_m``, and ``rho = R/2 - n(n-1)/2 >= 0`` over the chain (certified
    region by region when the block provides ``region_margin``; otherwise
    numerically within ``tol``), with the count of strictly positive rows.

    Raises
    ------
    ContractViolation
        If an end is not totally geodesic and has ``H <= 0``.
    """
    vacuum = isinstance(block, StaticField)
    if hasattr(block, "profile") and hasattr(block, "V"):
        space = block
        block = StaticField(space, np.linspace(0.15, np.pi - 0.15, 7) if s is None else s)
        block.length = space.profile.L
        vacuum = True
    L = _block_length(block, length)
    k = block.k
    n = k + 2
    target = n * (n - 1)
    odd = {"0": _odd_boundary_data(block, 0.0), "L": _odd_boundary_data(block, L)}
    smooth = all(v <= 1e-8 for v in odd.values())
    pieces = [(0.0, L, block), (L, 2 * L, ReflectedField(block, L))]
    corners = {}
    if not smooth:
        with np.errstate(divide="ignore", invalid="ignore"):
            H = {"0": float(np.min(block.mean_curvature(np.array([0.0]), -1.0))),
                 "L": float(np.min(block.mean_curvature(np.array([L]), 1.0)))}
        if min(H.values()) <= 0:
            raise ContractViolation(f"block ends are not totally geodesic and H = {H} is not positive",
                                    {"odd": odd, "H": H})
        width = L / 8
        # x = L: block inside, its mirror outside
        cL = CornerData(block, ReflectedField(block, L), L, 1.0, (0.0, 2 * L), label="chain L")
        gL, corners["L"] = mollify_corner(cL, width, eps=eps)
        pieces += gL.pieces[1:]
        # x = 0 seen from the previous period, placed at x = 2L
        c0 = CornerData(block, ReflectedField(block, 0.0), 0.0, -1.0, (-L, L), label="chain 0")
        g0, corners["0"] = mollify_corner(c0, width, eps=eps)
        pieces += [(lo + 2 * L, hi + 2 * L, ShiftedField(f, 2 * L)) for lo, hi, f in g0.pieces[1:]
                   if hi <= 0.0]
    double = PiecewiseField(pieces, label="double")
    chain = ChainField(double, 2 * L, copies)

    # rows: block samples plus points crowding the interfaces, in every period
    u = np.concatenate([np.linspace(0.0, L, npts), np.geomspace(1e-9, 1e-2, 40) * L,
                        L - np.geomspace(1e-9, 1e-2, 40) * L])
    u = np.unique(np.clip(u, 0.0, L))
    base = np.unique(np.concatenate([u, 2 * L - u]))
    x = np.unique(np.concatenate([base + 2 * L * j for j in range(copies)]))
    x = x[x <= chain.length]
    near = np.concatenate([I + d * np.geomspace(1e-6, 1e-3, 12) * L
                           for I in np.arange(copies * 2 + 1) * L for d in (-1, 1)])
    near = near[(near > 0) & (near < chain.length)]
    cert = {"period": 2 * L, "length": chain.length, "copies": copies, "odd_jets": odd,
            "smooth_interfaces": smooth, "corners": corners}
    if smooth and vacuum:
        cert["interface_R_error"] = float(np.max(np.abs(chain.curvature(near) - target)))
    if hasattr(block, "region_margin") and smooth:
        loc = chain.local(x)
        y = np.clip(np.where(loc <= L, loc, 2 * L - loc), 0.0, L)
        yu, back = np.unique(y, return_inverse=True)
        kind, margin = block.region_margin(yu)
        kind, margin = kind[back], margin[back]
        cert["rows"] = {kk: int(np.sum(kind == kk)) for kk in ("static", "conformal", "numeric")}
        rho = margin / 2
        cert["rho_min"] = float(rho.min())
        cert["strict_rows"] = int(np.sum(rho > 0))
        cert["passed"] = bool(rho.min() >= 0 and cert["strict_rows"] > 0)
    else:
        rho = (chain.curvature(x) - target).min(axis=1) / 2
        cert["rho_min"] = float(rho.min())
        cert["strict_rows"] = int(np.sum(rho > tol))
        cert["passed"] = bool(rho.min() >= -tol and cert.get("interface_R_error", 0.0) <= tol)
    return chain, cert
