"""Fixed-step integration of the loop equations with slip counting.

Three forms are covered:

* the second-order delayed PLL ODE of the PI-filter preset,
* the general first-order Volterra form, whose convolution is carried by
  exponential kernel modes updated in O(1) per step,
* the singularly perturbed form ``mu sigma'' + sigma' = (Volterra rhs)``.

All of them use classical RK4 with the method of steps; delayed values come
from cubic Hermite interpolation of the stored past. The heavy loops live in
the compiled ``_core`` extension, with ``_pycore`` as a pure-Python fallback
(forced by ``SLIPCERT_PURE=1``).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import _pycore
from .errors import DomainError, Divergence, StiffnessRefusal
from .fdi import Multipliers
from .linear_part import PllExample, SystemModel, make_pll_example
from .nonlinearity import PeriodicNonlinearity, make_sine_minus_beta

if os.environ.get("SLIPCERT_PURE") == "1":
    _kernel = _pycore
else:
    try:
        from . import _core as _kernel
    except ImportError:  # extension not built
        _kernel = _pycore

BACKEND = "compiled" if _kernel is not _pycore else "python"

DIV_LIMIT = 1e6
FD_STEP = 1e-4
STEP_DIVISOR = 20


def backend(pure: bool = False):
    """Integrator core module; ``pure=True`` always returns the Python one."""
    return _pycore if pure else _kernel


@dataclass(frozen=True)
class InitialState:
    """Initial data ``sigma(t) = history(t)`` on ``[-h, 0]`` plus ``sigma'(0)``.

    With ``history=None`` the history is constant at ``sigma0``. When
    ``sigma_dot0`` is ``None`` the forms that need it pick a consistent value
    (see :func:`consistent_velocity`).
    """

    sigma0: float = 0.0
    sigma_dot0: float | None = None
    history: Callable[[float], float] | None = field(default=None, compare=False)
    history_dot: Callable[[float], float] | None = field(default=None, compare=False)

    def at(self, t):
        if self.history is None:
            return float(self.sigma0)
        return float(self.history(t))

    def start(self) -> float:
        return self.at(0.0)

    def shifted(self, delta: float) -> "InitialState":
        if self.history is None:
            return replace(self, sigma0=self.sigma0 + delta)
        hist = self.history
        return replace(self, sigma0=self.sigma0 + delta, history=lambda t: hist(t) + delta)


@dataclass
class Trajectory:
    times: np.ndarray
    sigma: np.ndarray
    sigma_dot: np.ndarray
    history_t: np.ndarray
    history_sigma: np.ndarray
    period: float
    slips: int
    form: str = "ode"
    mu: float = 0.0
    convolution: np.ndarray | None = None
    i_t_values: np.ndarray | None = None

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def slips_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(np.floor(np.abs(self.sigma - self.sigma[0]) / self.period)).astype(int)

    def to_csv(self, path) -> None:
        running = self.slips_so_far()
        it = self.i_t_values if self.i_t_values is not None else np.full(self.times.size, np.nan)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,sigma,sigma_dot,slips_so_far,I_T\n")
            for t, x, v, k, i in zip(self.times.tolist(), self.sigma.tolist(), self.sigma_dot.tolist(), running.tolist(), it.tolist()):
                fh.write(f"{t!r},{x!r},{v!r},{k},{i!r}\n")

    def save(self, path) -> None:
        extra = {}
        if self.convolution is not None:
            extra["convolution"] = self.convolution
        if self.i_t_values is not None:
            extra["i_t_values"] = self.i_t_values
        np.savez(
            path,
            times=self.times,
            sigma=self.sigma,
            sigma_dot=self.sigma_dot,
            history_t=self.history_t,
            history_sigma=self.history_sigma,
            meta=np.array([self.period, self.slips, self.mu]),
            form=np.array(self.form),
            **extra,
        )

    @classmethod
    def load(cls, path) -> "Trajectory":
        with np.load(path) as z:
            period, slips, mu = z["meta"]
            return cls(
                z["times"], z["sigma"], z["sigma_dot"], z["history_t"], z["history_sigma"],
                float(period), int(slips), str(z["form"]), float(mu),
                z["convolution"] if "convolution" in z else None,
                z["i_t_values"] if "i_t_values" in z else None,
            )


def count_slips(sigma, period: float) -> int:
    """``max_t floor(|sigma(t) - sigma(0)| / period)``."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size == 0:
        return 0
    return int(np.floor(np.max(np.abs(sigma - sigma[0])) / period))


# --- shared helpers --------------------------------------------------------


def _check_step(step, horizon, delays, mu=0.0):
    if not (step > 0 and math.isfinite(step)):
        raise DomainError(f"step must be positive, got {step}")
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    for d in delays:
        if d > 0 and step > d / 10.0 * (1 + 1e-12):
            raise DomainError(f"step {step:g} exceeds delay/10 = {d / 10.0:g}")
    if mu > 0 and step > mu / 5.0 * (1 + 1e-12):
        raise StiffnessRefusal(f"step {step:g} does not resolve the fast mode: need step <= mu/5 = {mu / 5.0:g}")


def _n_steps(horizon, step):
    return max(1, int(round(horizon / step)))


def _history_nodes(init: InitialState, h_max: float, dt: float):
    nh = max(1, int(math.ceil(h_max / dt - 1e-9)))
    t = (np.arange(nh + 1) - nh) * dt
    x = np.array([init.at(tt) for tt in t])
    if init.history is None:
        return t, x, np.zeros_like(x), np.zeros_like(x)
    f = init.at
    if init.history_dot is not None:
        g = init.history_dot
        xd = np.array([g(tt) for tt in t])
        xdd = np.array([(g(tt + FD_STEP) - g(tt - FD_STEP)) / (2 * FD_STEP) for tt in t])
    else:
        xd = np.array([(f(tt + FD_STEP) - f(tt - FD_STEP)) / (2 * FD_STEP) for tt in t])
        xdd = np.array([(f(tt + FD_STEP) - 2 * f(tt) + f(tt - FD_STEP)) / FD_STEP**2 for tt in t])
    return t, x, xd, xdd


def _finish(times, sig, sdot, n_done, n_steps, hist_t, hist_x, nl, form, mu=0.0, conv=None):
    m = n_done + 1
    traj = Trajectory(
        times[:m], sig[:m], sdot[:m], hist_t, hist_x, nl.period, count_slips(sig[:m], nl.period),
        form, mu, None if conv is None else conv[:m],
    )
    if n_done < n_steps:
        t_last = float(times[n_done])
        raise Divergence(f"state left the finite range after t = {t_last:g}", t_last, traj)
    return traj


def default_step(T: float, h: float = 0.0, mu: float = 0.0) -> float:
    """``min(T, h, mu) / 20`` over the positive scales."""
    scales = [v for v in (T, h, mu) if v > 0]
    return min(scales) / STEP_DIVISOR


# --- second-order PLL form -------------------------------------------------


def consistent_velocity(ex: PllExample, nl: PeriodicNonlinearity, init: InitialState, b: float | None = None) -> float:
    """``sigma'(0)`` matching the Volterra forcing constant ``b = sigma'(0) + s T phi(sigma(-h))``.

    ``b`` defaults to ``K(0) beta = T beta``.
    """
    if b is None:
        b = ex.T * ex.beta
    return float(b - ex.s * ex.T * float(nl(init.at(-ex.h))))


def _as_example(params):
    if isinstance(params, SystemModel):
        if params.example is None:
            raise DomainError("model is not the PLL preset")
        return params.example
    if isinstance(params, PllExample):
        return params
    if isinstance(params, dict):
        return PllExample(float(params["T"]), float(params["s"]), float(params["beta"]), float(params["h0"]))
    raise DomainError(f"cannot read PLL parameters from {type(params).__name__}")


def integrate_pll_example(
    params,
    init: InitialState,
    horizon: float | None = None,
    step: float | None = None,
    nonlinearity: PeriodicNonlinearity | None = None,
    pure: bool = False,
) -> Trajectory:
    """Integrate ``x'' + x'/T + phi(x(t-h)) + s T d/dt phi(x(t-h)) = 0``.

    Parameters
    ----------
    params : PllExample, SystemModel or dict
        ``T, s, beta, h0`` of the preset.
    init : InitialState
        History on ``[-h, 0]`` and ``sigma'(0)``; a missing velocity is taken
        from :func:`consistent_velocity`.
    horizon, step : float, optional
        Default to ``200 T`` and ``min(T, h) / 20``.
    nonlinearity : PeriodicNonlinearity, optional
        Replaces ``sin - beta``.

    Returns
    -------
    Trajectory

    Raises
    ------
    DomainError
        If ``step > h / 10``.
    Divergence
        If ``|sigma'|`` exceeds ``1e6`` or the state stops being finite.
    """
    ex = _as_example(params)
    nl = nonlinearity if nonlinearity is not None else make_sine_minus_beta(ex.beta)
    T, s, h = ex.T, ex.s, ex.h
    horizon = 200.0 * T if horizon is None else float(horizon)
    step = default_step(T, h) if step is None else float(step)
    _check_step(step, horizon, [h])
    n = _n_steps(horizon, step)
    v0 = init.sigma_dot0 if init.sigma_dot0 is not None else consistent_velocity(ex, nl, init)
    ht, hx, hxd, hxdd = _history_nodes(init, h, step)
    kind, beta, period, knots, coef = nl.kernel_spec()
    sig, vel, _acc, n_done = backend(pure).pll_ode(
        T, s, h, step, n, kind, beta, period, knots, coef, hx, hxd, hxdd, init.start(), float(v0), DIV_LIMIT
    )
    times = np.arange(n + 1) * step
    return _finish(times, sig, vel, n_done, n, ht, hx, nl, "ode")


# --- Volterra and singular forms -------------------------------------------


def integrate_volterra(
    model: SystemModel,
    init: InitialState,
    horizon: float | None = None,
    step: float | None = None,
    mu: float = 0.0,
    pure: bool = False,
) -> Trajectory:
    """Integrate ``sigma' = alpha + sum rho_j phi(sigma(t - d_j)) - (gamma * phi(sigma))(t)``.

    The convolution over ``[0, t]`` is split into kernel modes ``c exp(-lambda t)``
    (delayed by ``d``) whose states obey ``w' = -lambda w + phi(sigma(t - d))``.
    With ``mu > 0`` the left-hand side becomes ``mu sigma'' + sigma'`` and
    ``init.sigma_dot0`` is required.

    Returns
    -------
    Trajectory
        ``convolution`` holds the running value of the integral term.

    Raises
    ------
    UnsupportedKernel
        If the kernel has no exponential-mode representation.
    StiffnessRefusal
        If ``mu > 0`` and ``step > mu / 5``.
    """
    modes = model.modes()
    nl = model.nonlinearity
    delays = list(modes.delays) + list(modes.direct_delays)
    T_scale = 1.0 / model.decay_r
    if horizon is None:
        horizon = 200.0 * (model.example.T if model.example is not None else T_scale)
    if step is None:
        step = default_step(model.example.T if model.example is not None else T_scale, min([d for d in delays if d > 0], default=0.0), mu)
    horizon, step = float(horizon), float(step)
    _check_step(step, horizon, delays, mu)
    if mu > 0 and init.sigma_dot0 is None:
        raise DomainError("the perturbed form needs sigma_dot0")
    n = _n_steps(horizon, step)
    h_max = max(delays, default=0.0)
    ht, hx, hxd, _ = _history_nodes(init, h_max, step)
    alpha = model.forcing_for(init.at)
    t_half = np.arange(2 * n + 1) * (0.5 * step)
    a = np.asarray(alpha(t_half), dtype=float)
    kind, beta, period, knots, coef = nl.kernel_spec()
    v0 = float(init.sigma_dot0) if mu > 0 else 0.0
    sig, sdot, conv, n_done = backend(pure).volterra(
        float(mu), step, n, a, modes.direct_gains, modes.direct_delays, modes.gains, modes.rates, modes.delays,
        kind, beta, period, knots, coef, hx, hxd, init.start(), v0, DIV_LIMIT,
    )
    times = np.arange(n + 1) * step
    return _finish(times, sig, sdot, n_done, n, ht, hx, nl, "singular" if mu > 0 else "volterra", mu, conv)


def integrate_singular(
    model: SystemModel,
    mu: float,
    init: InitialState,
    horizon: float | None = None,
    step: float | None = None,
    pure: bool = False,
) -> Trajectory:
    """Perturbed form ``mu sigma'' + sigma' = (Volterra rhs)``; ``step <= mu/5`` is enforced."""
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")
    return integrate_volterra(model, init, horizon, step, mu=mu, pure=pure)


def volterra_velocity(model: SystemModel, init: InitialState) -> float:
    """Right-hand side of the unperturbed form at ``t = 0``; a layer-free start for the perturbed one."""
    modes = model.modes()
    a0 = float(model.forcing_for(init.at)(np.array([0.0]))[0])
    direct = sum(g * float(model.nonlinearity(init.at(-d))) for g, d in zip(modes.direct_gains, modes.direct_delays))
    # mode states start at zero, so the convolution does not contribute
    return a0 + direct


# --- Lyapunov-type functional ----------------------------------------------


def it_integrand(sigma, sigma_dot, nl: PeriodicNonlinearity, mult: Multipliers):
    f = nl(sigma)
    fdot = nl.deriv(sigma) * sigma_dot
    a1, a2 = nl.slope_low, nl.slope_high
    return (
        mult.theta * sigma_dot * f
        + mult.eps * sigma_dot**2
        + mult.delta * f**2
        + mult.tau * (fdot / a1 - sigma_dot) * (fdot / a2 - sigma_dot)
    )


def monitor_IT(traj: Trajectory, nl: PeriodicNonlinearity, mult: Multipliers) -> np.ndarray:
    """Running value of the quadratic functional ``I_T`` at every sample horizon.

    ``d/dt phi(sigma)`` is taken as ``phi'(sigma) sigma'``. The integral starts
    at ``t = 0``; the history does not contribute.
    """
    g = it_integrand(np.asarray(traj.sigma), np.asarray(traj.sigma_dot), nl, mult)
    return cumulative_trapezoid(g, traj.times, initial=0.0)


# --- singular perturbation probe ---------------------------------------------


@dataclass
class MuProbe:
    mu_hat: float | None
    mus: list
    slips: dict
    base_slips: list
    sup_distance: dict
    t_layer: float
    tried: list = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.mu_hat is not None


def probe_mu0(
    model: SystemModel,
    inits,
    mu_start: float | None = None,
    max_halvings: int = 10,
    horizon: float | None = None,
    layer_factor: float = 20.0,
) -> MuProbe:
    """Search ``mu_hat`` such that ``mu_hat/2, /4, /8`` all reproduce the unperturbed slips.

    ``mu_hat`` starts at ``mu_start`` (default ``T`` of the preset, or ``1/r``)
    and is halved until the three probes match on every initial state and the
    sup-distance to the unperturbed trajectory past ``t_layer`` shrinks
    monotonically. A perturbed run starts from ``init.sigma_dot0`` or, when that
    is missing, from the unperturbed velocity (no initial layer).
    """
    scale = model.example.T if model.example is not None else 1.0 / model.decay_r
    mu_hat = scale if mu_start is None else float(mu_start)
    inits = list(inits)
    base = {}
    tried = []
    for _ in range(max_halvings + 1):
        mus = [mu_hat / 2, mu_hat / 4, mu_hat / 8]
        step = min(default_step(scale, _min_delay(model)), min(mus) / 5.0)
        t_layer = layer_factor * mus[0]
        if step not in base:
            base[step] = [integrate_volterra(model, ini, horizon, step) for ini in inits]
        ref = base[step]
        base_slips = [tr.slips for tr in ref]
        slips, dist = {}, {}
        ok = True
        for mu in mus:
            sl, dd = [], []
            for ini, tr0 in zip(inits, ref):
                start = ini if ini.sigma_dot0 is not None else replace(ini, sigma_dot0=volterra_velocity(model, ini))
                try:
                    tr = integrate_singular(model, mu, start, horizon, step)
                except Divergence:
                    sl.append(-1)
                    dd.append(math.inf)
                    continue
                sl.append(tr.slips)
                mask = tr.times >= t_layer
                dd.append(float(np.max(np.abs(tr.sigma[mask] - tr0.sigma[mask]))))
            slips[mu], dist[mu] = sl, max(dd) if dd else 0.0
            ok = ok and sl == base_slips
        monotone = all(dist[mus[i + 1]] < dist[mus[i]] for i in range(len(mus) - 1))
        tried.append((mu_hat, ok, monotone))
        if ok and monotone:
            return MuProbe(mu_hat, mus, slips, base_slips, dist, t_layer, tried)
        mu_hat /= 2.0
    return MuProbe(None, mus, slips, base_slips, dist, t_layer, tried)


def _min_delay(model: SystemModel) -> float:
    modes = model.modes()
    ds = [d for d in list(modes.delays) + list(modes.direct_delays) if d > 0]
    return min(ds, default=0.0)


def example_model(T=0.1, s=0.4, beta=0.9, h0=1.0) -> SystemModel:
    return make_pll_example(T, s, beta, h0)
