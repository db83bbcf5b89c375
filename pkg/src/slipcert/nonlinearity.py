"""Periodic phase-detector characteristics and their period integrals.

A characteristic is a C^1, ``period``-periodic map with exactly two simple
roots per period, non-positive mean and known slope bounds
``slope_low < 0 < slope_high``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicHermiteSpline

from .errors import DomainError, ModelViolation, QuadratureError

SCAN_POINTS = 4096
QUAD_RTOL = 1e-10

KINDS = ("phi", "abs_phi", "phi_abs_times_Phi", "phi_abs_times_P")

# integer tags understood by the compiled integrator core
KERNEL_SINE = 0
KERNEL_TABLE = 1


@dataclass(frozen=True, eq=False)
class PeriodicNonlinearity:
    """Immutable description of a periodic detector characteristic.

    Instances hash by identity so that period integrals can be memoised.
    """

    period: float
    func: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    slope_low: float
    slope_high: float
    sup_abs: float
    kind: str = "custom"
    beta: float | None = None
    table: tuple | None = field(default=None, repr=False)

    def __call__(self, sigma):
        return self.func(sigma)

    @property
    def symmetric_slopes(self) -> bool:
        return math.isclose(self.slope_low, -self.slope_high, rel_tol=1e-12)

    def weight(self, sigma):
        """Slope weight ``sqrt((1 - phi'/a1) (1 - phi'/a2))``."""
        d = self.deriv(sigma)
        prod = (1.0 - d / self.slope_low) * (1.0 - d / self.slope_high)
        return np.sqrt(np.maximum(prod, 0.0))

    def weight_p(self, sigma, eps: float, tau: float):
        w = self.weight(sigma)
        return np.sqrt(eps + tau * w * w)

    def kernel_spec(self):
        """Arguments describing this characteristic to the integrator core."""
        if self.kind == "sine_minus_beta":
            empty = np.zeros(1)
            return KERNEL_SINE, float(self.beta), self.period, empty, np.zeros((4, 1))
        if self.kind == "tabulated":
            knots, coef = self.table
            return KERNEL_TABLE, 0.0, self.period, knots, coef
        raise DomainError("only preset or tabulated characteristics can be integrated")


def make_sine_minus_beta(beta: float) -> PeriodicNonlinearity:
    """``phi(sigma) = sin(sigma) - beta`` with period ``2*pi``."""
    if not (0.0 < beta <= 1.0):
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    return PeriodicNonlinearity(
        period=2.0 * math.pi,
        func=lambda s: np.sin(s) - beta,
        deriv=np.cos,
        slope_low=-1.0,
        slope_high=1.0,
        sup_abs=1.0 + beta,
        kind="sine_minus_beta",
        beta=float(beta),
    )


def make_tabulated(sigma, phi, dphi) -> PeriodicNonlinearity:
    """Characteristic given by samples of value and slope over one period.

    ``sigma`` must be strictly increasing with ``sigma[-1] - sigma[0]`` equal
    to the period; the first and last samples must agree. Values in between
    use piecewise cubic Hermite interpolation, so the result is C^1.
    """
    sigma = np.asarray(sigma, dtype=float)
    phi = np.asarray(phi, dtype=float)
    dphi = np.asarray(dphi, dtype=float)
    if sigma.ndim != 1 or sigma.shape != phi.shape or sigma.shape != dphi.shape:
        raise DomainError("sigma, phi and dphi must be 1-D arrays of equal length")
    if sigma.size < 4 or np.any(np.diff(sigma) <= 0):
        raise DomainError("sigma must be strictly increasing with at least 4 samples")
    if not (math.isclose(phi[0], phi[-1], abs_tol=1e-12) and math.isclose(dphi[0], dphi[-1], abs_tol=1e-12)):
        raise DomainError("table is not periodic: first and last samples differ")
    spline = CubicHermiteSpline(sigma, phi, dphi)
    dspline = spline.derivative()
    origin = float(sigma[0])
    period = float(sigma[-1] - sigma[0])

    def wrap(s):
        return np.mod(np.asarray(s, dtype=float) - origin, period) + origin

    low, high = _quadratic_piece_extrema(dspline)
    if not (low < 0.0 < high):
        raise ModelViolation(f"slope bounds must straddle zero, got [{low}, {high}]")
    # the integrator core reduces its argument to [0, period): re-anchor the knots there,
    # splitting one piece at 0 with exact value and slope so the spline is unchanged
    knots = np.unique(np.concatenate([np.mod(sigma[:-1], period), [0.0, period]]))
    knots = knots[np.concatenate([[True], np.diff(knots) > 1e-12 * period])]
    knots[-1] = period
    anchored = CubicHermiteSpline(knots, spline(wrap(knots)), dspline(wrap(knots)))
    nl = PeriodicNonlinearity(
        period=period,
        func=lambda s: spline(wrap(s)),
        deriv=lambda s: dspline(wrap(s)),
        slope_low=float(low),
        slope_high=float(high),
        sup_abs=0.0,
        kind="tabulated",
        table=(np.ascontiguousarray(knots), np.ascontiguousarray(anchored.c)),
    )
    object.__setattr__(nl, "sup_abs", _scan_sup_abs(nl))
    return nl


def _quadratic_piece_extrema(dspline):
    # derivative of a cubic Hermite spline is piecewise quadratic: exact extrema
    x = dspline.x
    c = dspline.c
    vals = [dspline(x)]
    widths = np.diff(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = -c[1] / (2.0 * c[0])
    inside = np.isfinite(vertex) & (vertex > 0) & (vertex < widths)
    if np.any(inside):
        v = vertex[inside]
        vals.append(c[0][inside] * v * v + c[1][inside] * v + c[2][inside])
    allv = np.concatenate(vals)
    return float(allv.min()), float(allv.max())


def _scan_sup_abs(nl):
    grid = np.linspace(0.0, nl.period, SCAN_POINTS, endpoint=False)
    vals = np.abs(nl(grid))
    i = int(np.argmax(vals))
    step = nl.period / SCAN_POINTS
    res = optimize.minimize_scalar(
        lambda s: -abs(float(nl(s))),
        bounds=(grid[i] - step, grid[i] + step),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return max(float(vals[i]), -float(res.fun))


def roots_on_period(nl: PeriodicNonlinearity) -> list[float]:
    """Sorted roots of ``nl`` in ``[0, period)``.

    Raises :class:`ModelViolation` unless there are exactly two simple roots.
    """
    delta = nl.period
    grid = np.linspace(0.0, delta, SCAN_POINTS + 1)
    vals = nl(grid)
    found = []
    for i in range(SCAN_POINTS):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            found.append(grid[i])
        elif a * b < 0.0:
            found.append(optimize.brentq(nl.func, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15))
    roots = sorted({float(np.mod(r, delta)) for r in found})
    slope_scale = max(abs(nl.slope_low), abs(nl.slope_high))
    for r in roots:
        if abs(float(nl.deriv(r))) <= 1e-9 * slope_scale:
            raise ModelViolation(f"root at {r:.12g} is not simple")
    if len(roots) != 2:
        raise ModelViolation(f"expected exactly 2 roots per period, found {len(roots)}")
    return roots


def _slope_extrema_points(nl):
    grid = np.linspace(0.0, nl.period, SCAN_POINTS, endpoint=False)
    d = nl.deriv(grid)
    step = nl.period / SCAN_POINTS
    pts = []
    for sign in (1.0, -1.0):
        i = int(np.argmin(sign * d))
        res = optimize.minimize_scalar(
            lambda s: sign * float(nl.deriv(s)),
            bounds=(grid[i] - step, grid[i] + step),
            method="bounded",
            options={"xatol": 1e-13},
        )
        pts.append(float(np.mod(res.x, nl.period)))
    return pts


@functools.lru_cache(maxsize=4096)
def _breakpoints(nl, with_roots, with_slope_extrema):
    pts = [0.0, nl.period]
    if with_roots:
        pts.extend(roots_on_period(nl))
    if with_slope_extrema:
        pts.extend(_slope_extrema_points(nl))
        # the sine preset attains its slope bounds at 0 and pi exactly
        if nl.kind == "sine_minus_beta":
            pts.append(math.pi)
    if nl.kind == "tabulated" and len(nl.table[0]) <= 400:
        pts.extend(nl.table[0].tolist())
    pts = np.unique(np.clip(pts, 0.0, nl.period))
    keep = np.concatenate([[True], np.diff(pts) > 1e-13])
    return tuple(pts[keep])


def _integrand(nl, kind, eps, tau):
    if kind == "phi":
        return lambda s: float(nl(s))
    if kind == "abs_phi":
        return lambda s: abs(float(nl(s)))
    if kind == "phi_abs_times_Phi":
        return lambda s: abs(float(nl(s))) * float(nl.weight(s))
    return lambda s: abs(float(nl(s))) * float(nl.weight_p(s, eps, tau))


@functools.lru_cache(maxsize=65536)
def period_integral(nl: PeriodicNonlinearity, kind: str, eps: float = 0.0, tau: float = 0.0) -> float:
    """Integral over one period of one of the certificate integrands.

    Parameters
    ----------
    kind : {"phi", "abs_phi", "phi_abs_times_Phi", "phi_abs_times_P"}
        ``phi``, ``|phi|``, ``|phi| * weight`` or ``|phi| * sqrt(eps + tau * weight**2)``.
    eps, tau : float
        Only used by ``phi_abs_times_P``; both must be non-negative.
    """
    if kind not in KINDS:
        raise DomainError(f"unknown integrand kind {kind!r}")
    if kind == "phi_abs_times_P" and (eps < 0 or tau < 0):
        raise DomainError("eps and tau must be non-negative")
    pts = _breakpoints(nl, kind != "phi", kind in ("phi_abs_times_Phi", "phi_abs_times_P"))
    f = _integrand(nl, kind, eps, tau)
    # relative accuracy is meaningless when the integral cancels to ~0, so the
    # absolute floor follows the size of the integrand instead
    floor = 1e-13 * nl.period * max(nl.sup_abs, 1e-300)
    total = 0.0
    err = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        out = integrate.quad(f, a, b, epsabs=1e-14, epsrel=QUAD_RTOL, limit=200, full_output=1)
        val, abserr = out[0], out[1]
        if len(out) > 3 and abserr > max(QUAD_RTOL * abs(val), floor * (b - a) / nl.period):
            raise QuadratureError(f"quadrature for {kind} on [{a}, {b}] failed: {out[3]}", achieved=abserr)
        total += val
        err += abserr
    if err > max(QUAD_RTOL * abs(total), floor):
        raise QuadratureError(f"quadrature for {kind} reached only {err:.3g}", achieved=err)
    return total


def y_period_integral(nl: PeriodicNonlinearity, r1j: float, eps: float, tau: float) -> float:
    """Period integral of ``phi - r1j * |phi| * sqrt(eps + tau * weight**2)`` (diagnostic only)."""
    return period_integral(nl, "phi") - r1j * period_integral(nl, "phi_abs_times_P", eps, tau)


def check_invariants(nl: PeriodicNonlinearity, points: int = 1000, tol: float = 1e-12) -> None:
    """Raise :class:`ModelViolation` if ``nl`` breaks any structural assumption."""
    grid = np.linspace(0.0, nl.period, points, endpoint=False)
    if np.max(np.abs(nl(grid + nl.period) - nl(grid))) > tol * max(1.0, nl.sup_abs):
        raise ModelViolation("characteristic is not periodic")
    roots_on_period(nl)
    if period_integral(nl, "phi") > 1e-10:
        raise ModelViolation("mean of the characteristic must be non-positive")
    if not (nl.slope_low < 0.0 < nl.slope_high):
        raise ModelViolation("slope bounds must satisfy slope_low < 0 < slope_high")
    dense = np.linspace(0.0, nl.period, 8 * SCAN_POINTS, endpoint=False)
    d = nl.deriv(dense)
    slack = 1e-9 * max(abs(nl.slope_low), nl.slope_high)
    if d.min() < nl.slope_low - slack or d.max() > nl.slope_high + slack:
        raise ModelViolation("derivative leaves the declared slope bounds")
