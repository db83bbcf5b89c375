"""Linear block of the loop: delayed rational transfer, kernel and forcing.

The transfer function is stored as

    K(p) = -rho * exp(-h p) + sum_i N_i(p) / D_i(p) * exp(-h_i p),

which is exactly the Laplace transform of the Volterra kernel plus the
direct delayed feedthrough. Polynomial coefficients are ordered from the
highest power down, as in :func:`numpy.polyval`.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, signal

from .errors import DomainError, ModelViolation, UnsupportedKernel
from .nonlinearity import PeriodicNonlinearity

HURWITZ_THRESHOLD = -1e-9
DECAY_SAFETY = 1.05


@dataclass(frozen=True)
class RationalTerm:
    num: tuple
    den: tuple
    delay: float = 0.0

    def __post_init__(self):
        num = tuple(float(c) for c in np.trim_zeros(np.atleast_1d(np.asarray(self.num, float)), "f")) or (0.0,)
        den = tuple(float(c) for c in np.trim_zeros(np.atleast_1d(np.asarray(self.den, float)), "f"))
        if not den:
            raise DomainError("denominator must be a non-zero polynomial")
        if self.delay < 0:
            raise DomainError("delays must be non-negative")
        if len(num) > len(den):
            raise ModelViolation(f"improper term: deg num {len(num) - 1} > deg den {len(den) - 1}")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        object.__setattr__(self, "delay", float(self.delay))
        poles = self.poles()
        if poles.size and poles.real.max() >= HURWITZ_THRESHOLD:
            raise ModelViolation(f"denominator {den} is not Hurwitz (poles {poles})")

    def poles(self):
        return np.roots(self.den)

    def __call__(self, p):
        return np.polyval(self.num, p) / np.polyval(self.den, p) * np.exp(-self.delay * p)


@dataclass(frozen=True)
class DelayRationalTransfer:
    terms: tuple = ()
    rho: float = 0.0
    h: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.h < 0:
            raise DomainError("delay h must be non-negative")

    def __call__(self, omega):
        return eval_freq(self, omega)

    def at(self, p):
        """Evaluate ``K(p)`` at arbitrary complex ``p``."""
        p = np.asarray(p, dtype=complex)
        out = -self.rho * np.exp(-self.h * p)
        for term in self.terms:
            out = out + term(p)
        return out

    def poles(self):
        if not self.terms:
            return np.zeros(0, dtype=complex)
        return np.concatenate([t.poles() for t in self.terms])

    def delays(self):
        return [self.h] + [t.delay for t in self.terms]


def eval_freq(tf: DelayRationalTransfer, omega):
    """``K(i omega)`` for scalar or array ``omega >= 0``."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise DomainError("frequencies must be non-negative")
    out = tf.at(1j * w)
    return complex(out) if np.ndim(out) == 0 else out


def perturb_singular(tf: DelayRationalTransfer, mu: float) -> DelayRationalTransfer:
    """Transfer of the singularly perturbed loop, ``K(p) / (1 + mu p)``."""
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")
    lag = [mu, 1.0]
    terms = [RationalTerm(t.num, np.polymul(t.den, lag), t.delay) for t in tf.terms]
    if tf.rho != 0.0:
        terms.append(RationalTerm((-tf.rho,), lag, tf.h))
    return DelayRationalTransfer(tuple(terms), 0.0, 0.0)


@dataclass(frozen=True)
class KernelModes:
    """Kernel ``gamma(t) = sum Re(gain * exp(-rate (t - delay)))`` for ``t >= delay``.

    ``direct_gains``/``direct_delays`` collect the feedthrough terms that act
    like ``rho * phi(sigma(t - d))`` on the right-hand side.
    """

    gains: np.ndarray
    rates: np.ndarray
    delays: np.ndarray
    direct_gains: np.ndarray
    direct_delays: np.ndarray

    def kernel(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for c, lam, d in zip(self.gains, self.rates, self.delays):
            active = t >= d
            out = out + np.where(active, np.real(c * np.exp(-lam * np.where(active, t - d, 0.0))), 0.0)
        return out


def kernel_modes(tf: DelayRationalTransfer) -> KernelModes:
    """Partial-fraction expansion of every term into delayed exponentials."""
    gains, rates, delays = [], [], []
    dgains, ddelays = [], []
    if tf.rho != 0.0:
        dgains.append(tf.rho)
        ddelays.append(tf.h)
    for term in tf.terms:
        r, p, k = signal.residue(term.num, term.den)
        if p.size > 1:
            gap = np.abs(p[:, None] - p[None, :]) + np.eye(p.size)
            if gap.min() < 1e-8 * max(1.0, np.abs(p).max()):
                raise UnsupportedKernel(f"repeated poles in {term.den} are not supported")
        for ri, pi in zip(r, p):
            gains.append(complex(ri))
            rates.append(complex(-pi))
            delays.append(term.delay)
        k = np.atleast_1d(k)
        if k.size and k[-1] != 0.0:
            dgains.append(-float(np.real(k[-1])))
            ddelays.append(term.delay)
    return KernelModes(
        np.asarray(gains, dtype=complex),
        np.asarray(rates, dtype=complex),
        np.asarray(delays, dtype=float),
        np.asarray(dgains, dtype=float),
        np.asarray(ddelays, dtype=float),
    )


@dataclass(frozen=True)
class PllExample:
    """Parameters of the delayed PLL with proportional-integral filter."""

    T: float
    s: float
    beta: float
    h0: float

    @property
    def h(self) -> float:
        return self.h0 * self.T


def _check_example(T, s, beta, h0):
    if not T > 0:
        raise DomainError(f"T must be positive, got {T}")
    if not (0.0 < s < 1.0):
        raise DomainError(f"s must lie in (0, 1), got {s}")
    if not (0.0 < beta <= 1.0):
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    if not h0 >= 0:
        raise DomainError(f"h0 must be non-negative, got {h0}")


def pll_transfer(T: float, s: float, h: float) -> DelayRationalTransfer:
    """``K(p) = T (T s p + 1) / (T p + 1) exp(-h p)``."""
    return DelayRationalTransfer((RationalTerm((T * T * s, T), (T, 1.0), h),))


@dataclass(frozen=True)
class SystemModel:
    """Linear block together with the detector characteristic.

    ``decay_M`` and ``decay_r`` bound ``|alpha(t)| + |gamma(t)| <= M exp(-r t)``.
    ``forcing`` is the (history independent) forcing of a general model; the
    PLL preset builds its forcing from the initial history instead.
    """

    transfer: DelayRationalTransfer
    nonlinearity: PeriodicNonlinearity
    decay_M: float
    decay_r: float
    forcing_b: float = 0.0
    forcing: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    example: PllExample | None = None

    def __post_init__(self):
        if not (self.decay_M > 0 and self.decay_r > 0):
            raise DomainError("decay constants M and r must be positive")

    @functools.cached_property
    def _modes(self):
        return kernel_modes(self.transfer)

    def modes(self) -> KernelModes:
        return self._modes

    @property
    def rho(self) -> float:
        """Total magnitude of the delayed feedthrough gains."""
        return float(np.abs(self.modes().direct_gains).sum())

    @property
    def rho_delay(self) -> float:
        d = self.modes().direct_delays
        return float(d.max()) if d.size else 0.0

    def kernel(self, t):
        if self.example is not None:
            return example_kernel(self.example, t)
        return self.modes().kernel(t)

    def forcing_for(self, history: Callable[[float], float]):
        """Forcing ``alpha(t)`` of the first-order form for a given initial history."""
        if self.example is not None:
            return example_forcing(self.example, self.forcing_b, self.nonlinearity, history)
        if self.forcing is not None:
            return self.forcing
        return lambda t: np.zeros_like(np.asarray(t, dtype=float))


def example_kernel(ex: PllExample, t):
    t = np.asarray(t, dtype=float)
    return np.where(t >= ex.h, (1.0 - ex.s) * np.exp(-np.maximum(t - ex.h, 0.0) / ex.T), 0.0)


def example_forcing(ex: PllExample, b: float, nl: PeriodicNonlinearity, history):
    """``alpha(t) = exp(-t/T) (b - (1 - s) J(t))`` with ``J`` built from the history."""
    T, s, h = ex.T, ex.s, ex.h

    def partial(upper):
        if h == 0.0 or upper <= -h:
            return 0.0
        f = lambda lam: math.exp((lam + h) / T) * float(nl(history(lam)))
        return integrate.quad(f, -h, upper, epsabs=1e-14, epsrel=1e-12, limit=200)[0]

    j_full = partial(0.0)

    def alpha(t):
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t)
        j = np.array([partial(min(tt, h) - h) if tt < h else j_full for tt in flat])
        out = np.exp(-flat / T) * (b - (1.0 - s) * j)
        return out.reshape(t.shape)

    return alpha


def fit_decay_M(envelope: Callable[[np.ndarray], np.ndarray], r: float, t_max: float, points: int = 2000) -> float:
    """Tightest ``M`` with ``envelope(t) <= M exp(-r t)`` on a log grid, inflated by 5%."""
    t = np.concatenate([[0.0], np.logspace(math.log10(t_max) - 8, math.log10(t_max), points)])
    return DECAY_SAFETY * float(np.max(envelope(t) * np.exp(r * t)))


def make_pll_example(T: float, s: float, beta: float, h0: float) -> SystemModel:
    """System model of the delayed PLL with PI filter and ``sin - beta`` detector.

    ``b = K(0) beta = T beta``. The decay rate is ``r = 1/T``; ``M`` covers the
    worst admissible history, ``|J(t)| <= m T (exp(min(t, h)/T) - 1)``.
    """
    from .nonlinearity import make_sine_minus_beta

    _check_example(T, s, beta, h0)
    ex = PllExample(float(T), float(s), float(beta), float(h0))
    nl = make_sine_minus_beta(beta)
    tf = pll_transfer(T, s, ex.h)
    b = float(tf(0.0).real) * beta
    m = nl.sup_abs
    r = 1.0 / T

    def envelope(t):
        alpha_env = np.exp(-t / T) * (abs(b) + (1.0 - s) * m * T * (np.exp(np.minimum(t, ex.h) / T) - 1.0))
        return alpha_env + np.abs(example_kernel(ex, t))

    M = fit_decay_M(envelope, r, 50.0 * T + ex.h)
    return SystemModel(tf, nl, M, r, b, None, ex)


def make_rational_model(
    terms,
    nonlinearity: PeriodicNonlinearity,
    rho: float = 0.0,
    h: float = 0.0,
    M: float | None = None,
    r: float | None = None,
    forcing=None,
) -> SystemModel:
    """General model from explicit ``(num, den, delay)`` terms.

    Missing decay constants are taken from the kernel: ``r`` is the slowest
    modal decay rate and ``M`` the scanned envelope of ``|gamma| + |alpha|``.
    """
    tf = DelayRationalTransfer(tuple(t if isinstance(t, RationalTerm) else RationalTerm(*t) for t in terms), rho, h)
    modes = kernel_modes(tf)
    if r is None:
        r = float(modes.rates.real.min()) if modes.rates.size else 1.0
    if M is None:
        horizon = 40.0 / r + max(tf.delays())

        def envelope(t):
            a = np.abs(forcing(t)) if forcing is not None else 0.0
            return np.abs(modes.kernel(t)) + a

        M = fit_decay_M(envelope, r, horizon)
        if M == 0.0:
            M = DECAY_SAFETY
    return SystemModel(tf, nonlinearity, float(M), float(r), 0.0, forcing, None)
