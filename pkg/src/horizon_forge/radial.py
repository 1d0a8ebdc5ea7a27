"""Curvature of warped metrics ``g = a(r)^2 dr^2 + b(r)^2 h`` over an Einstein
cross-section with ``Ric_h = (d-1) h``.

The radial coefficient is stored as ``W = a^{-2}`` (the inverse metric
component ``g^{rr}``) rather than ``a``: the static metric has ``W = V``,
which is smooth through the horizons where ``a`` blows up.  Arclength
derivatives then read

    bdot  = b' sqrt(W)
    bddot = b'' W + W' b' / 2

and every formula below is written in terms of those.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import make_interp_spline

from .errors import DegeneracyError, DomainError

__all__ = [
    "RadialMetric",
    "conformal_scale",
    "dump_grid",
    "mean_curvature",
    "pullback",
    "scalar_curvature",
    "second_fundamental_coefficient",
]


def _arr(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class RadialMetric:
    """Warped metric on ``interval`` with derivative access.

    ``W(r) -> (W, W')`` and ``b(r) -> (b, b', b'')``; ``d`` is the
    cross-section dimension.  ``bdot`` optionally overrides the arclength
    derivative of ``b`` with a closed form that stays finite where ``b'``
    does not (conformal factors with fractional powers of ``V``).
    """

    interval: tuple
    W: Callable
    b: Callable
    d: int
    bdot: Optional[Callable] = None
    label: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def a(self, r):
        w, _ = self.W(_arr(r))
        with np.errstate(divide="ignore"):
            return 1.0 / np.sqrt(w)

    def arclength_jets(self, r):
        """Return ``(b, bdot, bddot)`` at ``r``."""
        r = _arr(r)
        w, w1 = self.W(r)
        b0, b1, b2 = self.b(r)
        if self.bdot is not None:
            bd = self.bdot(r)
        else:
            bd = b1 * np.sqrt(np.maximum(w, 0.0))
        bdd = b2 * w + 0.5 * w1 * b1
        return b0, bd, bdd

    def sample(self, n=200, guard=1e-9):
        lo, hi = self.interval
        k = np.arange(n)
        t = 0.5 * (1 - np.cos(np.pi * (k + 0.5) / n))
        return lo + guard + (hi - lo - 2 * guard) * t


def _checked(values, what, r):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        bad = np.atleast_1d(r)[~np.isfinite(np.atleast_1d(values))]
        raise DegeneracyError(f"{what} is not finite at r = {bad[:3]} (coordinate degeneracy)")
    return values


def scalar_curvature(metric, r):
    """``R = d(d-1)(1 - bdot^2)/b^2 - 2 d bddot / b``."""
    d = metric.d
    b0, bd, bdd = metric.arclength_jets(r)
    with np.errstate(all="ignore"):
        R = d * (d - 1) * (1.0 - bd * bd) / (b0 * b0) - 2.0 * d * bdd / b0
    return _checked(R, "scalar curvature", r)


def mean_curvature(metric, r):
    """Mean curvature ``d bdot / b`` of the slice, normal towards increasing r."""
    b0, bd, _ = metric.arclength_jets(r)
    with np.errstate(all="ignore"):
        H = metric.d * bd / b0
    return _checked(H, "mean curvature", r)


def second_fundamental_coefficient(metric, r):
    """Umbilic factor ``bdot / b``: ``II = (bdot/b) * (induced metric)``."""
    b0, bd, _ = metric.arclength_jets(r)
    with np.errstate(all="ignore"):
        k = bd / b0
    return _checked(k, "second fundamental form", r)


def conformal_scale(metric, omega, bdot=None, label=None):
    """Return ``Omega * g``; ``omega(r) -> (Omega, Omega', Omega'')``.

    Raises
    ------
    DomainError
        If ``Omega`` is not positive on a sample of the interval.
    """
    probe = metric.sample(101, guard=0.0)
    if np.any(omega(probe)[0] <= 0):
        raise DomainError("conformal factor must be positive")
    Wf, bf = metric.W, metric.b

    def W(r):
        w, w1 = Wf(r)
        o, o1, _ = omega(r)
        return w / o, (w1 * o - w * o1) / (o * o)

    def b(r):
        b0, b1, b2 = bf(r)
        o, o1, o2 = omega(r)
        s = np.sqrt(o)
        s1 = 0.5 * o1 / s
        s2 = 0.5 * o2 / s - 0.25 * o1 * o1 / (o * s)
        return s * b0, s1 * b0 + s * b1, s2 * b0 + 2 * s1 * b1 + s * b2

    return replace(metric, W=W, b=b, bdot=bdot, label=label or f"conformal({metric.label})")


def pullback(metric, phi, interval, label=None):
    """Pull ``metric`` back along ``r = phi(rho)``; ``phi -> (phi, phi', phi'')``.

    Raises
    ------
    DomainError
        If ``phi`` is not strictly monotone on ``interval``.
    """
    probe = np.linspace(interval[0], interval[1], 257)
    p0, p1, _ = phi(probe)
    if not (np.all(p1 > 0) or np.all(p1 < 0)):
        raise DomainError("reparametrization must be strictly monotone")
    Wf, bf = metric.W, metric.b

    def W(rho):
        f0, f1, f2 = phi(rho)
        w, w1 = Wf(f0)
        return w / (f1 * f1), w1 / f1 - 2.0 * w * f2 / f1 ** 3

    def b(rho):
        f0, f1, f2 = phi(rho)
        b0, b1, b2 = bf(f0)
        return b0, b1 * f1, b2 * f1 * f1 + b1 * f2

    bdot = None
    if metric.bdot is not None:
        old = metric.bdot

        def bdot(rho):
            f0, f1, _ = phi(rho)
            return old(f0) * np.sign(f1)

    return replace(metric, interval=tuple(interval), W=W, b=b, bdot=bdot,
                   label=label or f"pullback({metric.label})")


def from_samples(r, a, b, d, label="spline"):
    """Spline-backed metric through samples of ``a`` and ``b`` (quintic)."""
    r = _arr(r)
    wspl = make_interp_spline(r, 1.0 / _arr(a) ** 2, k=5)
    bspl = make_interp_spline(r, _arr(b), k=5)
    w1 = wspl.derivative()
    b1, b2 = bspl.derivative(), bspl.derivative(2)
    return RadialMetric(interval=(float(r[0]), float(r[-1])),
                        W=lambda x: (wspl(x), w1(x)),
                        b=lambda x: (bspl(x), b1(x), b2(x)), d=d, label=label)


def derivative_consistency(metric, npts=100, seed=0, h=1e-5):
    """Max relative mismatch between supplied and finite-difference derivatives."""
    rng = np.random.default_rng(seed)
    lo, hi = metric.interval
    span = hi - lo
    r = rng.uniform(lo + 0.05 * span, hi - 0.05 * span, npts)
    worst = 0.0
    w, w1 = metric.W(r)
    b0, b1, b2 = metric.b(r)
    wp, _ = metric.W(r + h)
    wm, _ = metric.W(r - h)
    bp = metric.b(r + h)
    bm = metric.b(r - h)
    pairs = [(w1, (wp - wm) / (2 * h)), (b1, (bp[0] - bm[0]) / (2 * h)),
             (b2, (bp[1] - bm[1]) / (2 * h))]
    for exact, fd in pairs:
        scale = np.maximum(np.abs(exact), 1.0)
        worst = max(worst, float(np.max(np.abs(exact - fd) / scale)))
    return worst


def dump_grid(metric, r, path, reference=None, extra=None):
    """Write ``r, a, b, R, H, margin`` (plus ``extra`` columns) as CSV."""
    r = _arr(r)
    R = scalar_curvature(metric, r)
    H = mean_curvature(metric, r)
    ref = 0.0 if reference is None else reference
    cols = {"r": r, "a": metric.a(r), "b": metric.b(r)[0], "R": R, "H": H, "margin": R - ref}
    for key, val in (extra or {}).items():
        cols[key] = _arr(val)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(cols))
        for row in zip(*cols.values()):
            writer.writerow([f"{float(v):.17g}" for v in row])
    return path
