"""Algebraic slip-bound conditions, the constants they use, and the certifier.

A certificate states that every solution satisfies
``|sigma(t) - sigma(0)| < k_bound * period`` for all ``t >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, DomainError, NoCertificate
from .fdi import MARGIN_TOL, FdiGrid, Multipliers, check_fdi, check_fdi_minorant
from .linear_part import SystemModel
from .nonlinearity import PeriodicNonlinearity, period_integral

THEOREMS = ("T1", "T2", "T3", "T4")


@dataclass(frozen=True)
class RCoefficients:
    r1: float
    r2: float
    r01: float
    r02: float
    r11: float
    r12: float

    def plain(self, j):
        return self.r1 if j == 1 else self.r2

    def weighted(self, j):
        return self.r01 if j == 1 else self.r02

    def p_weighted(self, j):
        return self.r11 if j == 1 else self.r12


def _numerators(nl, k, theta, x):
    if k < 1:
        raise DomainError(f"k must be a positive integer, got {k}")
    base = period_integral(nl, "phi")
    shift = x / (theta * k)
    return base - shift, base + shift


def r_coefficients(nl: PeriodicNonlinearity, k: int, theta: float, eps: float, tau: float, x: float) -> RCoefficients:
    """Ratios of ``int phi +- x/(theta k)`` to the three weighted ``|phi|`` integrals."""
    n1, n2 = _numerators(nl, k, theta, x)
    d = period_integral(nl, "abs_phi")
    d0 = period_integral(nl, "phi_abs_times_Phi")
    d1 = period_integral(nl, "phi_abs_times_P", float(eps), float(tau))
    return RCoefficients(n1 / d, n2 / d, n1 / d0, n2 / d0, n1 / d1, n2 / d1)


def matrix_Tj(mult: Multipliers, rj: float, r0j: float) -> np.ndarray:
    off12 = mult.a * mult.theta * rj / 2.0
    off23 = mult.a0 * mult.theta * r0j / 2.0
    return np.array(
        [
            [mult.eps, off12, 0.0],
            [off12, mult.delta, off23],
            [0.0, off23, mult.tau],
        ]
    )


def is_positive_definite(M) -> bool:
    """Sylvester's criterion on a symmetric 3x3 matrix."""
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3):
        raise ContractViolation(f"expected a 3x3 matrix, got shape {M.shape}")
    if np.max(np.abs(M - M.T)) > 1e-12:
        raise ContractViolation("matrix is not symmetric")
    m2 = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    m3 = (
        M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
        - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
        + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0])
    )
    return bool(M[0, 0] > 0 and m2 > 0 and m3 > 0)


def _min_eig(M):
    return float(np.linalg.eigvalsh(M)[0])


# --- constants --------------------------------------------------------------


def q_general(model: SystemModel, mult: Multipliers) -> float:
    """Closed-form bound on the integral functional for a root start and symmetric slopes."""
    M, r, m, rho = model.decay_M, model.decay_r, model.nonlinearity.sup_abs, model.rho
    et = mult.eps + mult.tau
    return (mult.theta * M * m + 2.0 * et * M * m * (M / r + rho) + et * M * M / 2.0) / r


def q0_singular(model: SystemModel, mult: Multipliers, q: float | None = None, reading: str = "grouped") -> float:
    """Constant for the singularly perturbed loop.

    ``grouped``: ``q + (theta M m + 2 (eps+tau) M m (M/r + rho)) rho m h + (eps+tau) rho^2 m^2 h``.
    ``split``: ``q + theta M m + 2 (eps+tau) M m (M/r + rho) rho m h + (eps+tau) rho^2 m^2 h``.
    """
    if q is None:
        q = q_general(model, mult)
    M, r, m = model.decay_M, model.decay_r, model.nonlinearity.sup_abs
    rho, h = model.rho, model.rho_delay
    et = mult.eps + mult.tau
    a = mult.theta * M * m
    b = 2.0 * et * M * m * (M / r + rho)
    tail = et * rho * rho * m * m * h
    if reading == "grouped":
        return q + (a + b) * rho * m * h + tail
    if reading == "split":
        return q + a + b * rho * m * h + tail
    raise DomainError(f"unknown reading {reading!r}")


def example_gamma0(s, h0):
    return max(s * h0 * h0 / 2, (h0 + 1 - s) ** 2 / 2)


def example_recipe(T, s, beta, h0) -> Multipliers:
    """Fixed multipliers of the delayed PLL: ``theta = a = 1``, ``eps = b0/T``, ``delta = a0 T``, ``tau = g0 T^3``."""
    g0 = example_gamma0(s, h0)
    half = (1 - g0 * T**4) / 2
    if half <= 0:
        raise NoCertificate(f"recipe needs gamma0 T^4 < 1, got {g0 * T**4:.4g}")
    return Multipliers(theta=1.0, eps=half / T, delta=half * T, tau=g0 * T**3, a=1.0)


def example_q(T, s, beta, h0) -> float:
    A = 3.5 * beta**2 + 3.0
    B = 3.0 * (1.0 - s) * (1.0 + beta) * (3.0 * beta + 1.0)
    C = 1.5 * (1.0 - s) ** 2 * (1.0 + beta) ** 2
    return T * T * (A + B * h0 + C * h0 * h0)


@dataclass(frozen=True)
class ExampleBound:
    T: float
    s: float
    beta: float
    h0: float
    gamma0: float
    two_sqrt_eps_delta: float
    q: float
    denominator: float
    r0: int

    @property
    def k_bound(self) -> int:
        """Smallest ``k`` with slips ``< k``, i.e. at most ``r0`` slipped cycles."""
        return self.r0 + 1


def example_bound(T, s, beta, h0) -> ExampleBound:
    mult = example_recipe(T, s, beta, h0)
    two = 2.0 * math.sqrt(mult.eps * mult.delta)
    weight = beta * math.asin(beta) + math.sqrt(1.0 - beta * beta)
    denom = 4.0 * two * weight - 2.0 * math.pi * beta
    q = example_q(T, s, beta, h0)
    if not denom > 0:
        raise NoCertificate(f"bias too large: denominator {denom:.4g} <= 0", best={"denominator": denom})
    return ExampleBound(T, s, beta, h0, example_gamma0(s, h0), two, q, denom, int(math.floor(q / denom)))


def example_r0(T, s, beta, h0) -> int:
    """Upper bound on the number of slipped cycles of the delayed PLL."""
    return example_bound(T, s, beta, h0).r0


# --- algebraic conditions ----------------------------------------------------


def pd_margin(nl, k, mult, x) -> float:
    """Smallest eigenvalue over both ``T_j`` (positive iff both are positive definite)."""
    rc = r_coefficients(nl, k, mult.theta, mult.eps, mult.tau, x)
    worst = math.inf
    for j in (1, 2):
        Tj = matrix_Tj(mult, rc.plain(j), rc.weighted(j))
        lam = _min_eig(Tj)
        if lam > 0 and not is_positive_definite(Tj):
            lam = 0.0
        worst = min(worst, lam)
    return worst


def t1_gap(nl, k, mult, x) -> float:
    """``min_j 4 delta - theta^2 r_{1j}^2``."""
    rc = r_coefficients(nl, k, mult.theta, mult.eps, mult.tau, x)
    return min(4.0 * mult.delta - (mult.theta * rc.p_weighted(j)) ** 2 for j in (1, 2))


def _fast_pd_margin(ints, k, mult, x):
    # same as pd_margin but with cached denominators (no quadrature)
    base, d, d0 = ints
    shift = x / (mult.theta * k)
    worst = math.inf
    for n in (base - shift, base + shift):
        Tj = matrix_Tj(mult, n / d, n / d0)
        worst = min(worst, _min_eig(Tj))
    return worst


# --- certificates ------------------------------------------------------------


@dataclass(frozen=True)
class SlipCertificate:
    k_bound: int
    theorem_used: str
    multipliers: Multipliers
    q_used: float
    margins: dict
    requires_root_start: bool
    k_plus_one_applied: bool = False
    q_source: str = "general"
    fdi_method: str = "numeric"
    notes: tuple = ()
    search: dict = field(default_factory=dict, compare=False)

    @property
    def max_slips(self) -> int:
        return self.k_bound - 1

    @property
    def condition_k(self) -> int:
        return self.k_bound - 1 if self.k_plus_one_applied else self.k_bound


@dataclass(frozen=True)
class SearchBudget:
    k_max: int = 50
    restarts: int = 3
    max_evals: int = 400
    seed: int = 0
    min_step: float = 1e-3


def _q_source(model, theorem, q):
    if isinstance(q, (int, float)) and not isinstance(q, bool):
        return "user"
    if q in (None, "auto"):
        return "example" if model.example is not None and theorem in ("T3", "T4") else "general"
    if q == "example" and model.example is None:
        raise DomainError("q='example' requires the PLL preset")
    if q not in ("example", "general"):
        raise DomainError(f"unknown q source {q!r}")
    return q


def _resolve_q(model, theorem, mult, q):
    """Value of the functional bound ``x`` and a label for where it came from."""
    source = _q_source(model, theorem, q)
    if source == "user":
        return float(q), source
    if source == "example":
        ex = model.example
        base = example_q(ex.T, ex.s, ex.beta, ex.h0)
    else:
        base = q_general(model, mult)
    if theorem == "T4":
        return q0_singular(model, mult, base), source
    return base, source


def _check_theorem_preconditions(model, theorem, q, root_start):
    nl = model.nonlinearity
    if theorem not in THEOREMS:
        raise DomainError(f"unknown theorem {theorem!r}; expected one of {THEOREMS}")
    if theorem in ("T3", "T4") and not nl.symmetric_slopes:
        raise DomainError(f"{theorem} requires slope_low == -slope_high")
    if theorem in ("T1", "T2") and _q_source(model, theorem, q) != "user":
        if not nl.symmetric_slopes:
            raise DomainError("with no user-supplied Q the fallback bound needs symmetric slopes")
        if not root_start:
            raise DomainError("with no user-supplied Q the fallback bound needs a root start")
    if theorem == "T4" and not root_start:
        raise DomainError("T4 requires the solution to start at a root of phi")


def condition_margin(model, theorem, k, mult, x):
    if theorem == "T1":
        return t1_gap(model.nonlinearity, k, mult, x)
    return pd_margin(model.nonlinearity, k, mult, x)


def _fdi_full(model, mult, method):
    if method == "minorant":
        ex = model.example
        return check_fdi_minorant(ex.T, ex.s, ex.h, mult)
    return check_fdi(model.transfer, model.nonlinearity, mult)


def _default_seed(model):
    if model.example is not None:
        ex = model.example
        try:
            return example_recipe(ex.T, ex.s, ex.beta, ex.h0)
        except NoCertificate:
            pass
    K0 = float(np.real(model.transfer(0.0)))
    scale = abs(K0) if K0 != 0 else 1.0
    nl = model.nonlinearity
    return Multipliers(1.0, 0.25 / scale, 0.25 * scale, 0.1 * abs(nl.slope_low * nl.slope_high) * scale, 1.0)


class _Objective:
    def __init__(self, model, theorem, k, q, pin_theta):
        self.model, self.theorem, self.k, self.q = model, theorem, k, q
        self.pin_theta = pin_theta
        self.grid = _grid_for(model)
        nl = model.nonlinearity
        self.ints = (period_integral(nl, "phi"), period_integral(nl, "abs_phi"), period_integral(nl, "phi_abs_times_Phi"))
        self.evals = 0

    def unpack(self, z):
        th = 1.0 if self.pin_theta else math.exp(z[0])
        return Multipliers(th, math.exp(z[1]), math.exp(z[2]), math.exp(z[3]), min(1.0, max(0.0, z[4])))

    def __call__(self, z):
        self.evals += 1
        m = self.unpack(z)
        f = self.grid.margin(m.theta, m.eps, m.delta, m.tau)
        x, _ = _resolve_q(self.model, self.theorem, m, self.q)
        if self.theorem == "T1":
            c = t1_gap(self.model.nonlinearity, self.k, m, x)
        else:
            c = _fast_pd_margin(self.ints, self.k, m, x)
        return f, c


_GRID_CACHE: dict = {}


def _grid_for(model):
    key = id(model.transfer), id(model.nonlinearity)
    hit = _GRID_CACHE.get(key)
    if hit is None or hit[0] is not model.transfer:
        grid = FdiGrid(model.transfer, model.nonlinearity)
        _GRID_CACHE.clear()
        _GRID_CACHE[key] = (model.transfer, grid)
        return grid
    return hit[1]


def _pack(m, pin_theta):
    return np.array([0.0 if pin_theta else math.log(m.theta), math.log(m.eps), math.log(m.delta), math.log(m.tau), m.a])


def _coordinate_search(obj, z0, budget):
    """Multiplicative coordinate ascent on ``min(fdi margin, condition margin)``.

    Stops at the first point that satisfies both conditions.
    """
    coords = [1, 2, 3, 4] if obj.pin_theta else [0, 1, 2, 3, 4]
    z = z0.copy()
    f, c = obj(z)
    best = (min(f, c), z.copy(), f, c)
    if f >= -MARGIN_TOL and c > 0:
        return z, f, c, True
    step = 0.5
    evals = 0
    while step >= budget.min_step and evals < budget.max_evals:
        improved = False
        for i in coords:
            for sgn in (1.0, -1.0):
                trial = z.copy()
                delta = step * sgn * (0.5 if i == 4 else 1.0)
                trial[i] += delta
                if i == 4:
                    trial[i] = min(1.0, max(0.0, trial[i]))
                    if trial[i] == z[i]:
                        continue
                tf_, tc = obj(trial)
                evals += 1
                if tf_ >= -MARGIN_TOL and tc > 0:
                    return trial, tf_, tc, True
                if min(tf_, tc) > best[0]:
                    best = (min(tf_, tc), trial.copy(), tf_, tc)
                    z = trial
                    improved = True
                    break
            if evals >= budget.max_evals:
                break
        if not improved:
            step *= 0.5
    return best[1], best[2], best[3], False


def certify(
    model: SystemModel,
    theorem: str = "T3",
    budget: SearchBudget | None = None,
    q=None,
    seeds=None,
    root_start: bool = True,
    fdi_method: str | None = None,
) -> SlipCertificate:
    """Smallest ``k`` (within budget) for which the chosen theorem certifies ``slips < k``.

    Parameters
    ----------
    q : float, {"general", "example"} or None
        Bound on the integral functional. A number is used as given (``T1``/``T2``);
        ``"general"`` uses :func:`q_general`; ``"example"`` the closed form of the
        PLL preset. ``None`` picks ``"example"`` for the preset under T3/T4.
    root_start : bool
        Whether ``phi(sigma(0)) = 0``. For T3 a non-root start costs one extra cycle.
    """
    budget = budget or SearchBudget()
    _check_theorem_preconditions(model, theorem, q, root_start)
    if fdi_method is None:
        fdi_method = "minorant" if model.example is not None else "numeric"
    # the inequality is homogeneous in the multipliers and q_general scales with them,
    # while fixed bounds are derived at theta = 1: either way theta = 1 loses nothing
    pin_theta = True
    seeds = list(seeds or [_default_seed(model)])
    if pin_theta:
        seeds = [replace(m, theta=1.0) for m in seeds]
    rng = np.random.default_rng(budget.seed)
    best_seen = {"objective": -math.inf}
    total_evals = 0
    carry = None
    for k in range(1, budget.k_max + 1):
        obj = _Objective(model, theorem, k, q, pin_theta)
        starts = [_pack(m, pin_theta) for m in seeds]
        for _ in range(budget.restarts):
            z = starts[0] + rng.normal(0.0, 0.7, size=5)
            z[4] = rng.uniform(0.0, 1.0)
            starts.append(z)
        if carry is not None:
            # the condition is monotone in k, so the best point for k-1 is a good start
            starts.insert(0, carry)
        best_k = -math.inf
        for z0 in starts:
            z, f, c, ok = _coordinate_search(obj, z0, budget)
            if min(f, c) > best_k:
                best_k, carry = min(f, c), z
            if min(f, c) > best_seen["objective"]:
                best_seen = {"objective": min(f, c), "fdi_margin": f, "condition_margin": c, "k": k}
            if not ok:
                continue
            mult = obj.unpack(z)
            cert = _finalize(model, theorem, k, mult, q, root_start, fdi_method)
            if cert is not None:
                total_evals += obj.evals
                return replace(cert, search={"evals": total_evals, "seed": budget.seed})
        total_evals += obj.evals
    raise NoCertificate(f"no {theorem} certificate with k <= {budget.k_max}", best=best_seen)


def _finalize(model, theorem, k, mult, q, root_start, fdi_method):
    report = _fdi_full(model, mult, fdi_method)
    if not report.holds and fdi_method == "minorant":
        report = check_fdi(model.transfer, model.nonlinearity, mult)
        fdi_method = "numeric"
    if not report.holds:
        return None
    x, source = _resolve_q(model, theorem, mult, q)
    cond = condition_margin(model, theorem, k, mult, x)
    if not cond > 0:
        return None
    plus_one = theorem == "T3" and not root_start
    notes = []
    if theorem == "T4":
        notes.append("valid for mu in (0, mu0); mu0 is not computable in closed form, see the empirical probe")
    if plus_one:
        notes.append("start off a root of phi: bound raised by one cycle")
    requires_root = theorem in ("T3", "T4") or source != "user"
    margins = {"fdi_margin": report.min_margin, "condition_margin": cond}
    if theorem == "T4":
        base, _ = _resolve_q(model, "T3", mult, q)
        margins["q0_split_reading"] = q0_singular(model, mult, base, "split")
    return SlipCertificate(
        k_bound=k + 1 if plus_one else k,
        theorem_used=theorem,
        multipliers=mult,
        q_used=x,
        margins=margins,
        requires_root_start=requires_root,
        k_plus_one_applied=plus_one,
        q_source=source,
        fdi_method=fdi_method,
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class Verification:
    valid: bool
    fdi_holds: bool
    fdi_margin: float
    condition_margin: float
    q_used: float


def verify_certificate(model: SystemModel, cert: SlipCertificate) -> Verification:
    """Deterministic single pass re-checking a stored certificate."""
    report = _fdi_full(model, cert.multipliers, cert.fdi_method)
    cond = condition_margin(model, cert.theorem_used, cert.condition_k, cert.multipliers, cert.q_used)
    if cert.q_source != "user":
        x, _ = _resolve_q(model, cert.theorem_used, cert.multipliers, cert.q_source)
        consistent = math.isclose(x, cert.q_used, rel_tol=1e-12)
    else:
        consistent = True
    return Verification(bool(report.holds and cond > 0 and consistent), report.holds, report.min_margin, cond, cert.q_used)


def certificate_to_dict(cert: SlipCertificate) -> dict:
    return {
        "k_bound": cert.k_bound,
        "max_slips": cert.max_slips,
        "theorem": cert.theorem_used,
        "q_used": cert.q_used,
        "q_source": cert.q_source,
        "fdi_method": cert.fdi_method,
        "requires_root_start": cert.requires_root_start,
        "k_plus_one_applied": cert.k_plus_one_applied,
        "multipliers": cert.multipliers.as_dict(),
        "margins": dict(cert.margins),
        "notes": list(cert.notes),
    }


def certificate_from_dict(d: dict) -> SlipCertificate:
    return SlipCertificate(
        k_bound=int(d["k_bound"]),
        theorem_used=str(d["theorem"]),
        multipliers=Multipliers(**d["multipliers"]),
        q_used=float(d["q_used"]),
        margins=dict(d.get("margins", {})),
        requires_root_start=bool(d["requires_root_start"]),
        k_plus_one_applied=bool(d.get("k_plus_one_applied", False)),
        q_source=str(d.get("q_source", "user")),
        fdi_method=str(d.get("fdi_method", "numeric")),
        notes=tuple(d.get("notes", ())),
    )
