"""Command-line front end.

Exit codes: 0 success, 1 usage or config error, 2 no certificate (or a
certificate that fails verification), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import tomli_w

from . import simulate as sim
from .config import ConfigError, RunConfig, build_model, load_config, tomllib
from .errors import DomainError, ModelViolation, NoCertificate, SlipCertError
from .fdi import Multipliers, check_fdi, dump_csv
from .nonlinearity import roots_on_period
from .slip_bounds import (
    SearchBudget,
    certificate_from_dict,
    certificate_to_dict,
    certify,
    example_bound,
    example_recipe,
    verify_certificate,
)

OUT_ENV = "SLIPCERT_OUT"
DEFAULT_OUT = "slipcert-out"

EXIT_OK, EXIT_USAGE, EXIT_NO_CERT, EXIT_NUMERIC = 0, 1, 2, 3

REPRO_BETAS = (0.9, 0.92, 0.95)
REPRO_EXPECTED = (1, 2, 5)
REPRO_PARAMS = {"T": 0.1, "s": 0.4, "h0": 1.0}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out:
        d = Path(args.out)
    elif cfg is not None and "dir" in cfg.output:
        d = Path(cfg.output["dir"])
    else:
        d = Path(os.environ.get(OUT_ENV, DEFAULT_OUT))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _need_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("this command needs --config")
    return load_config(args.config)


def _budget(task, seed):
    kw = {k: task[k] for k in ("k_max", "restarts", "max_evals") if k in task}
    return SearchBudget(seed=seed, **kw)


def _task_q(task):
    q = task.get("q", "auto")
    return None if q == "auto" else q


def _multipliers(task, model):
    if "multipliers" in task:
        return Multipliers(**task["multipliers"])
    if model.example is not None:
        ex = model.example
        return example_recipe(ex.T, ex.s, ex.beta, ex.h0)
    return None


def stable_root(nl) -> float:
    """Root of the characteristic with positive slope (a locked equilibrium)."""
    for r in roots_on_period(nl):
        if float(nl.deriv(r)) > 0:
            return float(r)
    raise ModelViolation("no root with positive slope")


def _velocity_sweep(task: dict, n_default: int = 7) -> list:
    sw = task.get("sweep", {})
    if "sigma_dot0" in sw:
        return list(sw["sigma_dot0"])
    n = sw.get("n_inits", n_default)
    return list(np.linspace(-2.0, 2.0, n)) if n > 0 else []


# --- commands --------------------------------------------------------------


def cmd_reproduce_paper(args) -> int:
    header = ("beta", "gamma0", "2sqrt(eps*delta)", "q", "denominator", "r0")
    rows = []
    for beta in REPRO_BETAS:
        b = example_bound(REPRO_PARAMS["T"], REPRO_PARAMS["s"], beta, REPRO_PARAMS["h0"])
        rows.append((beta, b.gamma0, b.two_sqrt_eps_delta, b.q, b.denominator, b.r0))
    print("T = {T}, s = {s}, h0 = {h0}, b = K(0) beta".format(**REPRO_PARAMS))
    print("{:>6} {:>8} {:>17} {:>12} {:>12} {:>4}".format(*header))
    for r in rows:
        print(f"{r[0]:>6.2f} {r[1]:>8.4f} {r[2]:>17.12f} {r[3]:>12.9f} {r[4]:>12.9f} {r[5]:>4d}")
    got = tuple(r[5] for r in rows)
    if got != REPRO_EXPECTED:
        for beta, g, e in zip(REPRO_BETAS, got, REPRO_EXPECTED):
            if g != e:
                print(f"mismatch at beta={beta}: r0 = {g}, expected {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print("r0 matches (1, 2, 5)")
    return EXIT_OK


def _probe_report(model, mu_start, task):
    root = stable_root(model.nonlinearity)
    inits = [sim.InitialState(root, None, None)] + [
        sim.InitialState(root, None, _linear_history(root, slope)) for slope in (-2.0, -1.0, 1.0, 2.0)
    ]
    probe = sim.probe_mu0(model, inits, mu_start=mu_start, horizon=task.get("horizon"))
    out = {"found": probe.found, "t_layer": probe.t_layer, "tried": [list(map(float, t)) for t in probe.tried]}
    if probe.found:
        out["mu_hat"] = probe.mu_hat
        out["sup_distance"] = {f"{mu:.6g}": d for mu, d in probe.sup_distance.items()}
    return out


def _linear_history(root, slope):
    return lambda t: root + slope * t


def cmd_certify(args) -> int:
    cfg = _need_config(args)
    model = build_model(cfg.system)
    task = cfg.task
    theorem = args.theorem or task.get("theorem", "T3")
    seed = args.seed if args.seed is not None else task.get("seed", 0)
    try:
        cert = certify(model, theorem, _budget(task, seed), q=_task_q(task), root_start=task.get("root_start", True))
    except NoCertificate as exc:
        print(f"no certificate: {exc}")
        for k, v in (exc.best or {}).items():
            print(f"  best {k} = {v}")
        return EXIT_NO_CERT
    doc = {"certificate": certificate_to_dict(cert), "search": dict(cert.search or {}), "system": cfg.system}
    doc["task"] = {"theorem": theorem, "seed": seed}
    mu = args.mu if args.mu is not None else task.get("mu")
    if theorem == "T4":
        doc["mu_probe"] = _probe_report(model, mu, task)
    out = _out_dir(args, cfg)
    path = out / cfg.output.get("certificate", "certificate.toml")
    path.write_text(tomli_w.dumps(doc), encoding="utf-8")
    print(f"theorem {cert.theorem_used}: slips < {cert.k_bound} (at most {cert.max_slips})")
    print(f"q = {cert.q_used!r} ({cert.q_source}), fdi check: {cert.fdi_method}")
    m = cert.multipliers
    print(f"multipliers theta={m.theta!r} eps={m.eps!r} delta={m.delta!r} tau={m.tau!r} a={m.a!r}")
    for k, v in cert.margins.items():
        print(f"margin {k} = {v!r}")
    for note in cert.notes:
        print(f"note: {note}")
    if "mu_probe" in doc:
        p = doc["mu_probe"]
        print(f"empirical mu0: {p['mu_hat']!r}" if p["found"] else "empirical mu0: not found")
    if args.dump_fdi:
        rep = check_fdi(model.transfer, model.nonlinearity, cert.multipliers, keep_samples=True)
        dump_csv(rep, args.dump_fdi)
    print(f"certificate written to {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if not args.certificate:
        raise ConfigError("verify needs --certificate FILE")
    try:
        with open(args.certificate, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read certificate: {exc}", str(args.certificate)) from exc
    cfg = RunConfig.from_dict({"system": doc.get("system", {})})
    try:
        cert = certificate_from_dict(doc["certificate"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"incomplete certificate: {exc}", "certificate") from exc
    model = build_model(cfg.system)
    v = verify_certificate(model, cert)
    print(f"fdi holds: {v.fdi_holds} (margin {v.fdi_margin!r})")
    print(f"condition margin: {v.condition_margin!r}")
    print("certificate VALID" if v.valid else "certificate INVALID")
    return EXIT_OK if v.valid else EXIT_NO_CERT


def cmd_simulate(args) -> int:
    cfg = _need_config(args)
    model = build_model(cfg.system)
    task = cfg.task
    init_cfg = task.get("init", {})
    sigma0 = init_cfg.get("sigma0", stable_root(model.nonlinearity))
    mu = args.mu if args.mu is not None else task.get("mu", 0.0)
    form = init_cfg.get("form", "singular" if mu else ("ode" if model.example is not None else "volterra"))
    horizon = args.horizon if args.horizon is not None else task.get("horizon")
    step = args.step if args.step is not None else task.get("step")
    init = sim.InitialState(sigma0, init_cfg.get("sigma_dot0"))
    if form == "ode":
        traj = sim.integrate_pll_example(model, init, horizon, step)
    elif form == "volterra":
        traj = sim.integrate_volterra(model, init, horizon, step)
    elif form == "singular":
        if init.sigma_dot0 is None:
            init = sim.InitialState(sigma0, sim.volterra_velocity(model, init))
        traj = sim.integrate_singular(model, mu, init, horizon, step)
    else:
        raise ConfigError(f"unknown form {form!r} (ode, volterra, singular)", "task.init.form")
    mult = _multipliers(task, model)
    if mult is not None:
        traj.i_t_values = sim.monitor_IT(traj, model.nonlinearity, mult)
    out = _out_dir(args, cfg)
    path = out / cfg.output.get("csv", "trajectory.csv")
    traj.to_csv(path)
    print(f"{form} form, {traj.times.size - 1} steps of {traj.step:g}: slips = {traj.slips}")
    if traj.i_t_values is not None:
        print(f"sup I_T = {float(np.max(traj.i_t_values))!r}")
    print(f"trajectory written to {path}")
    return EXIT_OK


SWEEP_KEYS = ("beta", "T", "h0", "s")
SWEEP_HEADER = ["beta", "T", "h0", "s", "status", "certified_k", "max_slips_bound", "empirical_max_slips", "n_inits"]


def _sweep_cell(cell):
    params, method, theorem, seed, velocities = cell
    from .linear_part import make_pll_example

    row = dict(params)
    try:
        if method == "example":
            b = example_bound(params["T"], params["s"], params["beta"], params["h0"])
            k = b.k_bound
        else:
            model = make_pll_example(params["T"], params["s"], params["beta"], params["h0"])
            k = certify(model, theorem, SearchBudget(seed=seed)).k_bound
        row.update(status="ok", certified_k=k, max_slips_bound=k - 1)
    except (NoCertificate, DomainError, ModelViolation) as exc:
        row.update(status=f"failed: {type(exc).__name__}", certified_k="", max_slips_bound="")
    emp = ""
    if velocities:
        ex = sim.PllExample(params["T"], params["s"], params["beta"], params["h0"])
        root = math.asin(params["beta"])
        try:
            emp = max(sim.integrate_pll_example(ex, sim.InitialState(root, float(v))).slips for v in velocities)
        except SlipCertError as exc:
            emp = f"failed: {type(exc).__name__}"
    row.update(empirical_max_slips=emp, n_inits=len(velocities))
    return row


def monotonicity_summary(rows, axes) -> dict:
    """For each swept axis: is the certified k non-decreasing along every grid line?

    Failed cells count as ``k = inf``.
    """
    def k_of(r):
        return r["certified_k"] if r["status"] == "ok" else math.inf

    index = {tuple(r[a] for a in SWEEP_KEYS): k_of(r) for r in rows}
    out = {}
    for ax in axes:
        i = SWEEP_KEYS.index(ax)
        lines = {}
        for key, k in index.items():
            lines.setdefault(key[:i] + key[i + 1:], []).append((key[i], k))
        out[ax] = all(
            all(a[1] <= b[1] for a, b in zip(pts, pts[1:])) for pts in (sorted(v) for v in lines.values())
        )
    return out


def run_sweep(cfg: RunConfig, seed=0, jobs=1, theorem=None):
    """Rows of the parameter sweep in grid order, and the monotonicity summary."""
    lp = cfg.system.get("linear_part", {})
    nl = cfg.system.get("nonlinearity", {})
    if lp.get("preset") != "pll_pi_filter" or nl.get("preset", "sine_minus_beta") != "sine_minus_beta":
        raise ConfigError("sweeps need the pll_pi_filter preset with sine_minus_beta", "system")
    task = cfg.task
    sw = task.get("sweep", {})
    base = {"beta": nl.get("beta"), "T": lp.get("T"), "h0": lp.get("h0"), "s": lp.get("s")}
    axes = []
    values = []
    for key in SWEEP_KEYS:
        if key in sw:
            axes.append(key)
            values.append(sw[key])
        elif base[key] is None:
            raise ConfigError("missing grid axis or base value", f"task.sweep.{key}")
        else:
            values.append([base[key]])
    n_cells = math.prod(len(v) for v in values)
    if n_cells > 10_000:
        raise ConfigError(f"grid has {n_cells} cells, limit is 10000", "task.sweep")
    method = sw.get("method", "example")
    if method not in ("example", "certify"):
        raise ConfigError(f"unknown method {method!r} (example, certify)", "task.sweep.method")
    theorem = theorem or task.get("theorem", "T3")
    velocities = _velocity_sweep(task, n_default=0)
    cells = [(dict(zip(SWEEP_KEYS, combo)), method, theorem, seed, velocities) for combo in itertools.product(*values)]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    return rows, monotonicity_summary(rows, axes) if rows else {}


def cmd_sweep(args) -> int:
    cfg = _need_config(args)
    seed = args.seed if args.seed is not None else cfg.task.get("seed", 0)
    rows, summary = run_sweep(cfg, seed, args.jobs, args.theorem)
    out = _out_dir(args, cfg)
    path = out / cfg.output.get("csv", "sweep.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_HEADER)
        w.writeheader()
        w.writerows(rows)
        for ax, ok in summary.items():
            fh.write(f"# monotone_in_{ax},{str(ok).lower()}\n")
    bad = [r for r in rows if r["status"] == "ok" and isinstance(r["empirical_max_slips"], int)
           and r["empirical_max_slips"] > r["max_slips_bound"]]
    print(f"{len(rows)} cells written to {path}")
    for ax, ok in summary.items():
        print(f"certified k non-decreasing in {ax}: {'yes' if ok else 'NO'}")
    if bad:
        print(f"{len(bad)} cells with empirical slips above the certified bound", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_dump_fdi(args) -> int:
    cfg = _need_config(args)
    model = build_model(cfg.system)
    mult = _multipliers(cfg.task, model)
    if mult is None:
        raise ConfigError("general models need task.multipliers", "task.multipliers")
    rep = check_fdi(model.transfer, model.nonlinearity, mult, keep_samples=True)
    path = Path(args.dump_fdi) if args.dump_fdi else _out_dir(args, cfg) / cfg.output.get("dump_fdi", "fdi.csv")
    dump_csv(rep, path)
    print(f"fdi {'holds' if rep.holds else 'fails'}: min {rep.min_margin!r} at omega = {rep.argmin_omega!r}")
    print(f"{rep.omega.size} samples written to {path}")
    return EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "reproduce-paper": cmd_reproduce_paper,
    "dump-fdi": cmd_dump_fdi,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slipcert", description="Cycle-slip certificates and simulations for phase-locked loops.")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--certificate", help="certificate file for verify")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--theorem", choices=["T1", "T2", "T3", "T4"])
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--dump-fdi", dest="dump_fdi", help="write (omega, fdi_value) samples to this CSV")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("slipcert: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError, ModelViolation) as exc:
        print(f"slipcert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoCertificate as exc:
        print(f"slipcert: {exc}", file=sys.stderr)
        return EXIT_NO_CERT
    except (SlipCertError, ArithmeticError) as exc:
        print(f"slipcert: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
