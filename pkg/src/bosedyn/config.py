"""Run configuration: a YAML document with one section per concern, strict keys,
command-line overrides, and validation before any compute starts."""
from __future__ import annotations

import copy
import difflib
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError

COMMANDS = ("hartree", "nls", "bogoliubov", "exact", "sweep", "gn-constant", "check")
SWEEP_KINDS = ("norm_error", "reduced_density", "dynamics", "kernel_scaling")

# defaults double as the schema: every accepted key appears here
DEFAULTS: dict = {
    "command": "hartree",
    "seed": 0,
    "grid": {"dimension": 1, "points": 512, "box_length": 32.0},
    "potential": {"form": "gaussian", "mass": -1.0, "width": 1.0, "profile_csv": None},
    "scaling": {"N": 16, "beta": 0.5},
    "initial": {"width": 1.0, "k0": 0.0, "center": 0.0, "coefficients": None},
    "time": {"t_final": 1.0, "dt": 1e-3, "sample_every": 0.01, "keep_snapshots": False},
    "nls": {"a": None},
    "modes": {"L_modes": 5},
    "bogoliubov": {"dt": 1e-3, "dm_csv_every": 0},
    "exact": {"N": 6, "scheme": "cf4", "fluctuation_M": None},
    "sweep": {
        "kind": "norm_error", "N_list": [4, 6, 8, 10, 12], "M_rule": "pow", "M_fixed": 4, "delta": 0.5,
        "phi0": "vacuum", "squeeze": 0.1, "alpha_probe": None, "workers": 1, "t_final": 0.3, "dt": 0.01,
    },
    "gn": {"points": 256, "box_length": 48.0, "tol": 1e-10, "shooting": True},
    "check": {"quick": True},
}

FORMS = ("gaussian", "sech2", "compact_bump", "delta", "neg_gaussian", "neg_sech2", "neg_compact_bump", "neg_delta")


def _flat_keys(d: dict, prefix: str = "") -> list[str]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        out.append(key)
        if isinstance(v, dict):
            out.extend(_flat_keys(v, key + "."))
    return out


def _unknown(key: str, choices: list[str]) -> ConfigError:
    hint = difflib.get_close_matches(key, choices, n=1, cutoff=0.5)
    more = f"; did you mean {hint[0]!r}?" if hint else ""
    return ConfigError(f"unknown configuration key {key!r}{more}")


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    for k, v in update.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise _unknown(path, _flat_keys(DEFAULTS))
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path} must be a mapping")
            _merge(base[k], v, path + ".")
        else:
            base[k] = v


def parse_override(item: str) -> dict:
    """'a.b=value' -> {'a': {'b': value}} with the value parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value of override {key!r}: {exc}") from exc
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: dict
    output_dir: str
    seed: int

    def section(self, name: str) -> dict:
        return self.params[name]

    def canonical(self) -> str:
        """Canonical JSON of everything that determines the results (not the output dir)."""
        return json.dumps({"command": self.command, "seed": self.seed, "params": self.params},
                          sort_keys=True, separators=(",", ":"))

    @property
    def run_id(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def load_config(path: str | Path | None = None, overrides: list[str] | None = None,
                command: str | None = None, output_dir: str | Path = "runs") -> RunConfig:
    """Defaults <- file <- overrides, then validation."""
    params = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"configuration file {path} not found")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ConfigError(f"cannot parse {path}{where}: {getattr(exc, 'problem', exc)}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path} must contain a mapping at top level")
        _merge(params, doc)
    for item in overrides or []:
        _merge(params, parse_override(item))
    if command is not None:
        params["command"] = command
    validate(params)
    cmd = params.pop("command")
    seed = int(params.pop("seed"))
    return RunConfig(cmd, params, str(output_dir), seed)


def _num(params: dict, section: str, key: str, *, positive=False, nonneg=False, integer=False, allow_none=False):
    v = params[section][key]
    if v is None and allow_none:
        return None
    name = f"{section}.{key}"
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{name} must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(f"{name} must be nonnegative, got {v}")
    if integer:
        params[section][key] = int(v)
    return v


def validate(params: dict) -> None:
    """Checks every physical precondition; raises ConfigError naming the violated one."""
    if params["command"] not in COMMANDS:
        raise ConfigError(f"unknown command {params['command']!r}; choose one of {', '.join(COMMANDS)}")
    _num(params, "grid", "dimension", integer=True)
    d = params["grid"]["dimension"]
    if d not in (1, 2):
        raise ConfigError(f"grid.dimension must be 1 or 2, got {d}")
    n = _num(params, "grid", "points", positive=True, integer=True)
    if n & (n - 1):
        raise ConfigError(f"grid.points must be a power of two, got {n}")
    _num(params, "grid", "box_length", positive=True)
    if params["potential"]["form"] not in FORMS:
        raise ConfigError(f"potential.form must be one of {FORMS}")
    _num(params, "potential", "mass")
    _num(params, "potential", "width", positive=True)
    _num(params, "scaling", "N", positive=True, integer=True)
    beta = _num(params, "scaling", "beta", nonneg=True)
    if d == 2 and not 0 < beta < 1:
        raise ConfigError(f"scaling.beta = {beta} is outside 0 < beta < 1, the range in which the "
                          "norm approximation holds for d = 2")
    _num(params, "time", "t_final", nonneg=True)
    _num(params, "time", "dt", positive=True)
    _num(params, "time", "sample_every", nonneg=True)
    _num(params, "initial", "width", positive=True)
    _num(params, "modes", "L_modes", positive=True, integer=True)
    _num(params, "bogoliubov", "dt", positive=True)
    _num(params, "exact", "N", positive=True, integer=True)
    if params["exact"]["scheme"] not in ("cf4", "midpoint"):
        raise ConfigError("exact.scheme must be 'cf4' or 'midpoint'")
    sw = params["sweep"]
    if sw["kind"] not in SWEEP_KINDS:
        raise ConfigError(f"sweep.kind must be one of {SWEEP_KINDS}, got {sw['kind']!r}")
    if not isinstance(sw["N_list"], list) or not all(isinstance(x, int) and x >= 2 for x in sw["N_list"]):
        raise ConfigError("sweep.N_list must be a list of integers >= 2")
    if sw["M_rule"] not in ("fixed", "pow", "pow_1_minus_delta"):
        raise ConfigError("sweep.M_rule must be fixed, pow or pow_1_minus_delta")
    _num(params, "sweep", "t_final", nonneg=True)
    _num(params, "sweep", "dt", positive=True)
    _num(params, "sweep", "workers", positive=True, integer=True)
    if sw["phi0"] not in ("vacuum", "squeezed"):
        raise ConfigError("sweep.phi0 must be vacuum or squeezed")
    if d == 2 and sw["alpha_probe"] is not None and not 0 < sw["alpha_probe"] < (1 - beta) / 3:
        raise ConfigError("sweep.alpha_probe must lie in (0, (1 - beta)/3) for d = 2")
    exact_run = params["command"] == "exact" or (params["command"] == "sweep" and sw["kind"] != "kernel_scaling")
    if exact_run and d != 1:
        raise ConfigError("exact N-body runs are limited to d = 1")
    _num(params, "gn", "points", positive=True, integer=True)
    _num(params, "gn", "box_length", positive=True)
    _num(params, "gn", "tol", positive=True)
