"""Experiment configuration: schema validation and per-experiment defaults."""

from __future__ import annotations

import copy
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema

from ..errors import ConfigError

__all__ = ["SCHEMA", "DEFAULTS", "COMMANDS", "load_schema", "resolve_config", "load_config", "validate"]


def load_schema() -> dict:
    return json.loads(resources.files("sdmd.harness").joinpath("schema.json").read_text())


SCHEMA = load_schema()

_INVARIANTS = {"identity_tol": 1e-12, "constant_tol": 1e-10, "spectrum_tol": 1e-10}

DEFAULTS = {
    "ou": {
        "model": {"name": "ou", "params": {"theta": 1.0, "mu0": 0.0, "sigma": 0.1}},
        "sampler": {"kind": "uniform-random", "domain": [[-2.0, 2.0]], "counts": 4000},
        "simulation": {"delta_t": 0.1, "substeps": 10, "n_eval": 1},
        "dictionary": {"family": "monomial", "dim": 1, "max_degree": 5},
        "method": "sdmd",
        "gamma": None,
        "coefficients": {"source": "analytic", "estimator": "binned", "bins": 50},
        "spectrum": {"mode": "linearized", "n_report": 10, "reference": [0, 1, 2, 3, 4, 5]},
        "training": {"learning_rate": 1e-4, "outer_epochs": 300, "inner": 2, "batch_size": 0, "momentum": False},
    },
    "stuart-landau": {
        "model": {"name": "stuart-landau", "params": {}},
        "sampler": {
            "kind": "uniform-grid",
            "domain": [[0.4, 0.8], [-math.pi, math.pi]],
            "counts": [20, 20],
            "periodic": [False, True],
        },
        "simulation": {"delta_t": 0.1, "substeps": 10000, "n_eval": 1},
        "dictionary": {"family": "fourier", "radial_modes": 3, "angular_modes": 10, "r_range": [0.2, 1.0]},
        "method": "sdmd",
        "gamma": None,
        "coefficients": {"source": "analytic", "estimator": "binned", "bins": 20},
        "spectrum": {"mode": "linearized", "n_report": 21, "reference": [[0, n] for n in range(-5, 6)]},
        "lattice": {"shape": [50, 50], "domain": [[0.4, 0.8], [-math.pi, math.pi]], "modes": 6},
    },
    "triple-well": {
        "model": {"name": "triple-well", "params": {"noise": [1.09, 1.09]}},
        "sampler": {"kind": "uniform-grid", "domain": [[-2.0, 2.0], [-1.0, 2.0]], "counts": [35, 35]},
        "simulation": {"delta_t": 0.1, "substeps": 100, "n_eval": 1},
        "dictionary": {"family": "network", "hidden": [32, 32], "n_learned": 7},
        "method": "sdmd-dl",
        "gamma": 1e-4,
        "coefficients": {"source": "analytic", "estimator": "binned", "bins": 10},
        "spectrum": {"mode": "linearized", "n_report": 10, "reference": []},
        "training": {"learning_rate": 1e-6, "outer_epochs": 200, "inner": 2, "batch_size": 0, "momentum": False},
        "lattice": {"shape": [100, 75], "domain": [[-2.0, 2.0], [-1.0, 2.0]], "modes": 4},
    },
    "neural-mass": {
        "model": {"name": "neural-mass", "params": {"stay_prob": 0.999}},
        "simulation": {"delta_t": 0.01, "substeps": 1, "n_eval": 1},
        "dictionary": {"family": "network", "hidden": [50, 50], "n_learned": 25},
        "methods": ["sdmd-dl", "edmd-dl"],
        "gamma": 1e-4,
        "coefficients": {"source": "estimated", "estimator": "binned", "bins": 40},
        "spectrum": {"mode": "linearized", "n_report": 10, "reference": []},
        "training": {"learning_rate": 1e-7, "outer_epochs": 300, "inner": 2, "batch_size": 0, "momentum": False},
        "neuralmass": {"duration": 600.0, "initial_state": [1.0, -1.0]},
    },
    "convergence-m": {
        "model": {"name": "ou", "params": {"theta": 1.0, "mu0": 0.0, "sigma": 0.1}},
        "dictionary": {"family": "monomial", "dim": 1, "max_degree": 3},
        "simulation": {"delta_t": 0.1},
        "gamma": None,
        "sweep": {"m": [1000, 4000, 16000], "trials": 50, "domain": [-2.0, 2.0]},
    },
    "convergence-dt": {
        "model": {"name": "ou", "params": {"theta": 1.0, "mu0": 0.0, "sigma": 0.1}},
        "dictionary": {"family": "monomial", "dim": 1, "max_degree": 2},
        "sweep": {"delta_t": [1e-3, 3e-3, 1e-2, 3e-2, 1e-1], "points": [1.0], "function_degree": 2},
    },
    "convergence-N": {
        "model": {"name": "ou", "params": {"theta": 1.0, "mu0": 0.0, "sigma": 0.1}},
        "dictionary": {"family": "monomial", "dim": 1, "max_degree": 6},
        "simulation": {"delta_t": 0.1},
        "gamma": 0.0,
        "sweep": {"degrees": [2, 3, 4, 5, 6], "samples": 4000, "domain": [-2.0, 2.0]},
    },
    "custom": {
        "simulation": {"delta_t": 0.1, "substeps": 10, "n_eval": 1},
        "method": "sdmd",
        "gamma": None,
        "coefficients": {"source": "analytic", "estimator": "binned", "bins": 50},
        "spectrum": {"mode": "linearized", "n_report": 10, "reference": []},
        "training": {"learning_rate": 1e-4, "outer_epochs": 100, "inner": 1, "batch_size": 0, "momentum": False},
    },
}

for _d in DEFAULTS.values():
    _d.setdefault("seed", 0)
    _d.setdefault("output", "sdmd-out")
    _d.setdefault("threads", 1)
    _d.setdefault("notes", [])
    _d.setdefault("invariants", dict(_INVARIANTS))

# experiments each command accepts
COMMANDS = {
    "simulate": {"ou", "stuart-landau", "triple-well", "neural-mass", "custom"},
    "spectrum": {"ou", "stuart-landau", "triple-well", "custom"},
    "convergence": {"convergence-m", "convergence-dt", "convergence-N"},
    "compare": {"ou", "stuart-landau", "triple-well", "neural-mass", "custom"},
    "neuralmass": {"neural-mass"},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "dictionary":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg: dict):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


def resolve_config(raw: dict, command: str | None = None, overrides: dict | None = None) -> dict:
    """Validate ``raw``, fill per-experiment defaults, apply CLI overrides and re-validate.

    A replaced ``dictionary`` block is taken as a whole (families do not mix).
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    validate(raw)
    exp = raw["experiment"]
    cfg = _merge(DEFAULTS[exp], raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    validate(cfg)
    if command is not None and exp not in COMMANDS[command]:
        raise ConfigError(f"command '{command}' does not run experiment '{exp}'")
    _check_semantics(cfg, command)
    return cfg


def _check_semantics(cfg, command):
    exp = cfg["experiment"]
    if exp == "custom":
        for key in ("model", "sampler", "dictionary"):
            if key not in cfg:
                raise ConfigError(f"custom experiments must give '{key}'")
    sampler = cfg.get("sampler")
    if sampler:
        dom = sampler.get("domain", [])
        for lo, hi in dom:
            if not hi > lo:
                raise ConfigError(f"sampler interval [{lo}, {hi}] is empty")
        if sampler.get("kind") == "uniform-grid":
            counts = sampler.get("counts")
            if not isinstance(counts, list) or len(counts) != len(dom):
                raise ConfigError("uniform-grid sampler needs one count per axis")
        if sampler.get("periodic") and len(sampler["periodic"]) != len(dom):
            raise ConfigError("periodic flags must match the sampler axes")
    if command == "compare" and len(cfg.get("methods", [])) < 2:
        raise ConfigError("compare needs at least two entries in 'methods'")
    d = cfg.get("dictionary", {})
    methods = cfg.get("methods") or [cfg.get("method")]
    dl = [m for m in methods if m and m.endswith("-dl")]
    if dl and d.get("family") != "network":
        raise ConfigError(f"method {dl[0]} needs a network dictionary")
    if d.get("family") == "network" and any(m and not m.endswith("-dl") for m in methods):
        raise ConfigError("fixed-dictionary methods cannot use a network dictionary")
    sweep = cfg.get("sweep", {})
    if exp == "convergence-m" and sorted(sweep.get("m", [])) != sweep.get("m", []):
        raise ConfigError("sweep.m must be increasing")


def load_config(path, command=None, overrides=None) -> dict:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})") from None
    return resolve_config(raw, command, overrides)
