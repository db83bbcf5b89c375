"""TOML run configuration: schema check, round trip and model construction.

Layout::

    [system.nonlinearity]
    preset = "sine_minus_beta"      # or "tabulated" with sigma/phi/dphi arrays
    beta = 0.9

    [system.linear_part]
    preset = "pll_pi_filter"        # or terms = [{num, den, delay}] with rho, h, M, r
    T = 0.1
    s = 0.4
    h0 = 1.0

    [task]
    name = "certify"
    theorem = "T3"

Unknown keys are rejected with their dotted location.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import SlipCertError
from .linear_part import PllExample, RationalTerm, SystemModel, make_pll_example, make_rational_model, pll_transfer
from .nonlinearity import PeriodicNonlinearity, make_sine_minus_beta, make_tabulated

TASKS = ("certify", "simulate", "sweep", "verify", "reproduce-paper", "dump-fdi")


class ConfigError(SlipCertError, ValueError):
    def __init__(self, message, location=""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


FLOAT = "float"
INT = "int"
STR = "str"
BOOL = "bool"
FLOATS = "floats"
NUMBER_OR_STR = "number|str"

TERM_SCHEMA = {"num": FLOATS, "den": FLOATS, "delay": FLOAT}

SCHEMA = {
    "system": {
        "nonlinearity": {"preset": STR, "beta": FLOAT, "sigma": FLOATS, "phi": FLOATS, "dphi": FLOATS},
        "linear_part": {
            "preset": STR,
            "T": FLOAT,
            "s": FLOAT,
            "h0": FLOAT,
            "terms": [TERM_SCHEMA],
            "rho": FLOAT,
            "h": FLOAT,
            "M": FLOAT,
            "r": FLOAT,
        },
    },
    "task": {
        "name": STR,
        "theorem": STR,
        "seed": INT,
        "q": NUMBER_OR_STR,
        "mu": FLOAT,
        "horizon": FLOAT,
        "step": FLOAT,
        "k_max": INT,
        "restarts": INT,
        "max_evals": INT,
        "root_start": BOOL,
        "multipliers": {"theta": FLOAT, "eps": FLOAT, "delta": FLOAT, "tau": FLOAT, "a": FLOAT},
        "init": {"sigma0": FLOAT, "sigma_dot0": FLOAT, "form": STR},
        "sweep": {
            "beta": FLOATS,
            "T": FLOATS,
            "h0": FLOATS,
            "s": FLOATS,
            "sigma_dot0": FLOATS,
            "n_inits": INT,
            "method": STR,
        },
    },
    "output": {"dir": STR, "certificate": STR, "csv": STR, "dump_fdi": STR},
}


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_leaf(kind, value, loc):
    if kind == FLOAT:
        if not _is_number(value):
            raise ConfigError(f"expected a number, got {value!r}", loc)
        return float(value)
    if kind == INT:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"expected an integer, got {value!r}", loc)
        return value
    if kind == STR:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", loc)
        return value
    if kind == BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", loc)
        return value
    if kind == FLOATS:
        if not isinstance(value, list):
            raise ConfigError(f"expected an array of numbers, got {value!r}", loc)
        for i, v in enumerate(value):
            if not _is_number(v):
                raise ConfigError(f"expected a number, got {v!r}", f"{loc}[{i}]")
        return [float(v) for v in value]
    if kind == NUMBER_OR_STR:
        if _is_number(value):
            return float(value)
        if isinstance(value, str):
            return value
        raise ConfigError(f"expected a number or a string, got {value!r}", loc)
    raise AssertionError(kind)


def _validate(schema, data, loc):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a table, got {type(data).__name__}", loc)
    out = {}
    for key, value in data.items():
        here = f"{loc}.{key}" if loc else key
        if key not in schema:
            raise ConfigError(f"unknown key (allowed: {', '.join(schema)})", here)
        kind = schema[key]
        if isinstance(kind, dict):
            out[key] = _validate(kind, value, here)
        elif isinstance(kind, list):
            if not isinstance(value, list):
                raise ConfigError("expected an array of tables", here)
            out[key] = [_validate(kind[0], item, f"{here}[{i}]") for i, item in enumerate(value)]
        else:
            out[key] = _check_leaf(kind, value, here)
    return out


@dataclass
class RunConfig:
    """Validated configuration; ``data`` is the normalized nested table."""

    data: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        data = _validate(SCHEMA, raw, "")
        task = data.get("task", {})
        if "name" in task and task["name"] not in TASKS:
            raise ConfigError(f"unknown task {task['name']!r} (choose from {', '.join(TASKS)})", "task.name")
        return cls(data)

    def to_dict(self) -> dict:
        return _copy(self.data)

    def dumps(self) -> str:
        return tomli_w.dumps(self.data)

    @property
    def system(self) -> dict:
        return self.data.get("system", {})

    @property
    def task(self) -> dict:
        return self.data.get("task", {})

    @property
    def output(self) -> dict:
        return self.data.get("output", {})


def _copy(d):
    if isinstance(d, dict):
        return {k: _copy(v) for k, v in d.items()}
    if isinstance(d, list):
        return [_copy(v) for v in d]
    return d


def loads_config(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    return RunConfig.from_dict(raw)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}", str(path)) from exc
    return RunConfig.from_dict(raw)


def _require(block, key, loc):
    if key not in block:
        raise ConfigError("missing required key", f"{loc}.{key}")
    return block[key]


def build_nonlinearity(block: dict) -> PeriodicNonlinearity:
    loc = "system.nonlinearity"
    preset = block.get("preset", "sine_minus_beta")
    if preset == "sine_minus_beta":
        return make_sine_minus_beta(_require(block, "beta", loc))
    if preset == "tabulated":
        return make_tabulated(_require(block, "sigma", loc), _require(block, "phi", loc), _require(block, "dphi", loc))
    raise ConfigError(f"unknown preset {preset!r} (sine_minus_beta, tabulated)", f"{loc}.preset")


def build_model(system: dict) -> SystemModel:
    """System model described by a ``system`` block."""
    nl_block = system.get("nonlinearity")
    lp = system.get("linear_part")
    if nl_block is None:
        raise ConfigError("missing table", "system.nonlinearity")
    if lp is None:
        raise ConfigError("missing table", "system.linear_part")
    loc = "system.linear_part"
    nl = build_nonlinearity(nl_block)
    preset = lp.get("preset")
    if preset == "pll_pi_filter":
        T, s, h0 = (_require(lp, k, loc) for k in ("T", "s", "h0"))
        if nl.kind == "sine_minus_beta":
            return make_pll_example(T, s, nl.beta, h0)
        tf = pll_transfer(T, s, PllExample(T, s, 0.0, h0).h)
        return make_rational_model(tf.terms, nl, 0.0, 0.0, lp.get("M"), lp.get("r"))
    if preset is not None:
        raise ConfigError(f"unknown preset {preset!r} (pll_pi_filter)", f"{loc}.preset")
    terms = [
        RationalTerm(tuple(_require(t, "num", f"{loc}.terms[{i}]")), tuple(_require(t, "den", f"{loc}.terms[{i}]")), t.get("delay", 0.0))
        for i, t in enumerate(lp.get("terms", []))
    ]
    return make_rational_model(terms, nl, lp.get("rho", 0.0), lp.get("h", 0.0), lp.get("M"), lp.get("r"))
