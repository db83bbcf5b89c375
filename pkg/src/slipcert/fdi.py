"""Popov-type frequency-domain inequality and its checks.

For multipliers ``(theta, eps, delta, tau)`` and slope bounds ``a1 < 0 < a2``
the inequality reads, for every ``omega >= 0``,

    Re{theta K - tau conj(K + i omega / a1) (K + i omega / a2)}
        - eps |K|^2 - delta >= 0,

with ``K = K(i omega)``. Two checks are offered: a numerical grid search
with analytic tail control for arbitrary transfers, and an exact
polynomial minorant for the delayed PLL preset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DomainError, IndeterminateTail
from .linear_part import DelayRationalTransfer, eval_freq
from .nonlinearity import PeriodicNonlinearity

MARGIN_TOL = 1e-12
TAIL_EPS = 1e-12
GRID_POINTS = 4096
REFINE_MINIMA = 10


@dataclass(frozen=True)
class Multipliers:
    theta: float
    eps: float
    delta: float
    tau: float
    a: float = 1.0

    def __post_init__(self):
        for name in ("theta", "eps", "delta", "tau"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"multiplier {name} must be positive and finite, got {v}")
        if not (0.0 <= self.a <= 1.0):
            raise DomainError(f"a must lie in [0, 1], got {self.a}")

    @property
    def a0(self) -> float:
        return 1.0 - self.a

    def as_dict(self):
        return {"theta": self.theta, "eps": self.eps, "delta": self.delta, "tau": self.tau, "a": self.a}


@dataclass(frozen=True)
class FdiReport:
    holds: bool
    min_margin: float
    argmin_omega: float
    tail_ok: bool
    grid_spec: dict
    method: str = "numeric"
    omega: np.ndarray | None = field(default=None, repr=False, compare=False)
    values: np.ndarray | None = field(default=None, repr=False, compare=False)


def fdi_components(K, omega, a1, a2):
    """Return the arrays multiplying ``theta``, ``tau`` and ``eps``.

    The inequality value is ``theta * A - tau * B - eps * C - delta``.
    """
    w = np.asarray(omega, dtype=float)
    A = np.real(K)
    B = np.real(np.conj(K + 1j * w / a1) * (K + 1j * w / a2))
    C = np.abs(K) ** 2
    return A, B, C


def fdi_value(tf: DelayRationalTransfer, nl: PeriodicNonlinearity, mult: Multipliers, omega):
    """Left-hand side of the frequency inequality at ``omega >= 0``."""
    K = eval_freq(tf, omega)
    A, B, C = fdi_components(K, omega, nl.slope_low, nl.slope_high)
    out = mult.theta * A - mult.tau * B - mult.eps * C - mult.delta
    return float(out) if np.ndim(out) == 0 else out


def default_omega_max(tf: DelayRationalTransfer) -> float:
    scales = [1.0]
    poles = tf.poles()
    if poles.size:
        scales.append(float(np.abs(poles).max()))
    delays = [d for d in tf.delays() if d > 0]
    if delays:
        scales.append(1.0 / min(delays))
    return 100.0 * max(scales)


def hybrid_grid(omega_max: float, points: int = GRID_POINTS):
    """Linear grid on ``[0, omega_max/1000]`` followed by a log grid up to ``omega_max``."""
    if points < 2:
        raise DomainError("grid needs at least 2 points")
    n_lin = max(2, points // 8)
    n_log = max(2, points - n_lin)
    knee = omega_max / 1000.0
    lin = np.linspace(0.0, knee, n_lin, endpoint=False)
    log = np.logspace(math.log10(knee), math.log10(omega_max), n_log)
    return np.concatenate([lin, log])


def _tail_bound_frequency(tf, nl, mult, omega_max):
    """Frequency beyond which the inequality provably holds, from a quadratic lower bound.

    For ``omega >= omega_max`` with ``|K| <= Kb`` the value is at least
    ``c2 w^2 - c1 w - c0``, ``c2 = -tau / (a1 a2)``.
    """
    a1, a2 = nl.slope_low, nl.slope_high
    c2 = -mult.tau / (a1 * a2)
    if abs(c2) <= TAIL_EPS:
        raise IndeterminateTail(f"dominant omega^2 coefficient {c2:.3g} is numerically zero")
    if c2 < 0:
        return math.inf, False
    # sup |K| on the tail: rational factors are evaluated far beyond their corners
    probe = np.logspace(math.log10(omega_max), math.log10(omega_max) + 8, 512)
    kb = 1.05 * float(np.max(np.abs(eval_freq(tf, probe))))
    c1 = mult.tau * abs(1.0 / a1 + 1.0 / a2) * kb
    c0 = mult.theta * kb + (mult.eps + mult.tau) * kb * kb + mult.delta
    return (c1 + math.sqrt(c1 * c1 + 4.0 * c2 * c0)) / (2.0 * c2), True


def _local_minima(values):
    v = values
    inner = np.flatnonzero((v[1:-1] <= v[:-2]) & (v[1:-1] <= v[2:])) + 1
    idx = list(inner)
    if v[0] <= v[1]:
        idx.append(0)
    if v[-1] <= v[-2]:
        idx.append(len(v) - 1)
    return sorted(set(idx), key=lambda i: v[i])


def check_fdi(
    tf: DelayRationalTransfer,
    nl: PeriodicNonlinearity,
    mult: Multipliers,
    omega_max: float | None = None,
    points: int = GRID_POINTS,
    refine: int = REFINE_MINIMA,
    keep_samples: bool = False,
) -> FdiReport:
    """Numerical check of the inequality over all ``omega >= 0``.

    The grid is extended past ``omega_max`` until a quadratic lower bound
    guarantees positivity. This path is best-effort numerical, not a proof.
    """
    if points < 2:
        raise DomainError("grid needs at least 2 points")
    if omega_max is None:
        omega_max = default_omega_max(tf)
    omega = hybrid_grid(omega_max, points)
    w_tail, tail_ok = _tail_bound_frequency(tf, nl, mult, omega_max)
    if tail_ok and w_tail > omega_max:
        extra = np.logspace(math.log10(omega_max), math.log10(w_tail * 1.01), max(16, points // 4))[1:]
        omega = np.concatenate([omega, extra])
    values = fdi_value(tf, nl, mult, omega)
    i_min = int(np.argmin(values))
    best_w, best_v = float(omega[i_min]), float(values[i_min])
    for i in _local_minima(values)[:refine]:
        lo = omega[max(i - 1, 0)]
        hi = omega[min(i + 1, len(omega) - 1)]
        if hi <= lo:
            continue
        res = optimize.minimize_scalar(
            lambda w: fdi_value(tf, nl, mult, w), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10 * max(hi, 1.0)}
        )
        if res.fun < best_v:
            best_v, best_w = float(res.fun), float(res.x)
    spec = {"omega_max": float(omega_max), "points": int(points), "tail_from": float(min(w_tail, omega[-1]))}
    return FdiReport(
        holds=bool(best_v >= -MARGIN_TOL and tail_ok),
        min_margin=best_v,
        argmin_omega=best_w,
        tail_ok=tail_ok,
        grid_spec=spec,
        method="numeric",
        omega=omega if keep_samples else None,
        values=values if keep_samples else None,
    )


class FdiGrid:
    """Pre-evaluated inequality components on a fixed grid for fast repeated checks."""

    def __init__(self, tf, nl, omega_max=None, points=GRID_POINTS):
        self.tf, self.nl = tf, nl
        self.omega_max = default_omega_max(tf) if omega_max is None else omega_max
        self.omega = hybrid_grid(self.omega_max, points)
        self.A, self.B, self.C = fdi_components(eval_freq(tf, self.omega), self.omega, nl.slope_low, nl.slope_high)

    def margin(self, theta, eps, delta, tau):
        return float(np.min(theta * self.A - tau * self.B - eps * self.C)) - delta


# --- delayed PLL preset --------------------------------------------------


def omega_exact(T, s, h, mult: Multipliers, omega):
    """Inequality value times ``1 + T^2 omega^2`` for the PLL preset with ``a2 = -a1 = 1``."""
    w = np.asarray(omega, dtype=float)
    th, e, d, ta = mult.theta, mult.eps, mult.delta, mult.tau
    c, sn = np.cos(w * h), np.sin(w * h)
    return (
        ta * T**2 * w**4
        + w**2 * (th * T**3 * s * c - T**4 * s**2 * (e + ta) + ta - d * T**2)
        - th * T**2 * (1 - s) * w * sn
        + th * T * c
        - (e + ta) * T**2
        - d
    )


def omega_poly_lower_bound(T, s, h, mult: Multipliers):
    """Coefficients ``(c4, c2, c0)`` of an even quartic below :func:`omega_exact`.

    Uses ``cos x >= 1 - x^2/2`` and ``|sin x| <= |x|``; with ``theta = 1`` this is
    the classical minorant of the delayed PLL.
    """
    th, e, d, ta = mult.theta, mult.eps, mult.delta, mult.tau
    # halves are written as "/ 2" so exact rational inputs stay exact
    c4 = ta * T**2 - th * T**3 * s * h**2 / 2
    c2 = th * T**3 * s - T**4 * s**2 * (e + ta) + ta - d * T**2 - th * T * h**2 / 2 - th * (1 - s) * T**2 * h
    c0 = th * T - (e + ta) * T**2 - d
    return c4, c2, c0


def even_quartic_min(c4, c2, c0):
    """Minimum of ``c4 x^2 + c2 x + c0`` over ``x = omega^2 >= 0`` and its argmin in omega."""
    if c4 < 0 or (c4 == 0 and c2 < 0):
        return -math.inf, math.inf
    if c4 > 0 and c2 < 0:
        x = -c2 / (2.0 * c4)
        return c0 - c2 * c2 / (4.0 * c4), math.sqrt(x)
    return c0, 0.0


def check_fdi_minorant(T, s, h, mult: Multipliers, tol: float = MARGIN_TOL) -> FdiReport:
    """Exact sufficient check for the PLL preset through the quartic minorant."""
    c4, c2, c0 = omega_poly_lower_bound(T, s, h, mult)
    tail_ok = c4 > 0 or (c4 == 0 and c2 >= 0)
    low, arg = even_quartic_min(c4, c2, c0)
    scale = max(abs(c0), abs(T), 1.0)
    return FdiReport(
        holds=bool(tail_ok and low >= -tol * scale),
        min_margin=low,
        argmin_omega=arg,
        tail_ok=tail_ok,
        grid_spec={"coefficients": (c4, c2, c0)},
        method="minorant",
    )


def dump_csv(report: FdiReport, path) -> None:
    if report.omega is None:
        raise DomainError("report was produced without samples; pass keep_samples=True")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("omega,fdi_value\n")
        for w, v in zip(report.omega.tolist(), report.values.tolist()):
            fh.write(f"{w!r},{v!r}\n")
