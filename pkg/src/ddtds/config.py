"""Experiment configuration: schema, defaults, hashing and plant assembly.

A configuration is one JSON document. Unknown keys are rejected at every
level. Matrices are nested row-major arrays.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema
import numpy as np

from .exceptions import ConfigError
from .model import DelayedLtiSystem, zoh_discretize

__all__ = ["SCHEMA", "DEFAULTS", "load_config", "validate_config", "config_hash", "build_plant",
           "with_overrides"]

_matrix = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_opt_matrix = {"oneOf": [_matrix, {"type": "null"}]}
_opt_number = {"type": ["number", "null"]}
_nonneg_int = {"type": "integer", "minimum": 0}


def _obj(props, required=()):
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": list(required)}


SCHEMA = _obj({
    "name": {"type": "string"},
    "plant": _obj({
        "continuous": _obj({"A": _matrix, "B": _matrix, "A1": _opt_matrix}, ["A", "B"]),
        "discrete": _obj({"A0": _matrix, "B": _matrix, "A1": _opt_matrix}, ["A0", "B"]),
        "L1": _opt_matrix, "L2": _opt_matrix, "D": _opt_matrix, "D0": _opt_matrix,
    }),
    "sampling_period": {"type": "number", "exclusiveMinimum": 0},
    "excitation": {"type": "array", "minItems": 1,
                   "items": {"type": "array", "minItems": 2, "maxItems": 2,
                             "items": {"type": "number"}}},
    "samples": {"type": "integer", "minimum": 1},
    "hbar": _nonneg_int,
    "delays": _obj({"h1": _nonneg_int, "h2": _nonneg_int}),
    "noise": _obj({"variance": {"type": "number", "minimum": 0},
                   "seed": {"type": ["integer", "null"]}}),
    "identification": _obj({"r": _opt_number, "state_delay": {"type": "boolean"},
                            "fixed_j": {"type": ["integer", "null"]}}),
    "synthesis": _obj({
        "kind": {"enum": ["stabilize", "cost", "hinf", "noisy"]},
        "hbar": {"type": ["integer", "null"], "minimum": 0},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "mode": {"enum": ["equality", "norm-min"]},
        "margin": {"type": ["number", "null"], "minimum": 0},
        "epsilon_grid": {"type": "boolean"},
        "backend": {"enum": ["clarabel", "cvxopt", None]},
        "alpha": {"type": "number", "minimum": 0},
        "lam": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "coupling": {"enum": ["structured", "derived", "printed"]},
        "x0": {"type": ["array", "null"], "items": {"type": "number"}},
        "delta": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "gamma": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "theta": {"type": ["number", "null"], "exclusiveMinimum": 0},
    }),
    "validation": _obj({
        "histories": {"type": "integer", "minimum": 1},
        "sequences": {"type": "integer", "minimum": 1},
        "horizon": {"type": "integer", "minimum": 2},
        "h2_range": {"type": ["array", "null"], "items": _nonneg_int, "minItems": 2,
                     "maxItems": 2},
        "h1_range": {"type": ["array", "null"], "items": _nonneg_int, "minItems": 2,
                     "maxItems": 2},
        "reference": _opt_number,
        "tracking_tol": {"type": "number", "exclusiveMinimum": 0},
        "tracking_horizon": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer"},
    }),
    "output_dir": {"type": ["string", "null"]},
}, ["plant", "samples", "hbar"])

DEFAULTS = {
    "name": "experiment",
    "sampling_period": 1.0,
    "excitation": [[1.0, 1.0]],
    "delays": {"h1": 0, "h2": 0},
    "noise": {"variance": 0.0, "seed": 0},
    "identification": {"r": None, "state_delay": True, "fixed_j": None},
    "synthesis": {"kind": "stabilize", "hbar": None, "epsilon": 1.0, "mode": "equality",
                  "margin": None, "epsilon_grid": False, "backend": None, "alpha": 0.0,
                  "lam": None, "coupling": "structured", "x0": None, "delta": None,
                  "gamma": None, "theta": None},
    "validation": {"histories": 20, "sequences": 50, "horizon": 600, "h2_range": None,
                   "h1_range": None, "reference": 1.0, "tracking_tol": 1e-3,
                   "tracking_horizon": 2000, "seed": 0},
    "output_dir": None,
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(raw: dict) -> dict:
    """Check ``raw`` against the schema and fill defaults."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    plant = raw["plant"]
    if ("continuous" in plant) == ("discrete" in plant):
        raise ConfigError("plant needs exactly one of 'continuous' or 'discrete'")
    cfg = _merge(DEFAULTS, raw)
    if cfg["samples"] <= cfg["hbar"]:
        raise ConfigError(f"samples ({cfg['samples']}) must exceed hbar ({cfg['hbar']})")
    for key in ("h1", "h2"):
        if cfg["delays"][key] > cfg["hbar"]:
            raise ConfigError(f"delays/{key} exceeds hbar")
    build_plant(cfg)  # shape checks
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate_config(raw)


def with_overrides(cfg: dict, seed=None, mode=None, epsilon=None, margin=None) -> dict:
    """Apply command-line overrides and re-validate."""
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["noise"]["seed"] = int(seed)
        cfg["validation"]["seed"] = int(seed)
    if mode is not None:
        cfg["synthesis"]["mode"] = mode
    if epsilon is not None:
        cfg["synthesis"]["epsilon"] = float(epsilon)
    if margin is not None:
        cfg["synthesis"]["margin"] = float(margin)
    return validate_config(cfg)


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def build_plant(cfg: dict) -> DelayedLtiSystem:
    """Discrete plant described by ``cfg`` (ZOH-discretized when continuous)."""
    p = cfg["plant"]
    try:
        if "continuous" in p:
            c = p["continuous"]
            A0, B = zoh_discretize(np.array(c["A"], dtype=float), np.array(c["B"], dtype=float),
                                   cfg["sampling_period"])
            A1 = c.get("A1")
        else:
            d = p["discrete"]
            A0, B = np.array(d["A0"], dtype=float), np.array(d["B"], dtype=float)
            A1 = d.get("A1")
        n = A0.shape[0]
        A1 = np.zeros((n, n)) if A1 is None else np.array(A1, dtype=float)
        opt = {k: (None if p.get(k) is None else np.array(p[k], dtype=float))
               for k in ("L1", "L2", "D", "D0")}
        return DelayedLtiSystem(A0, A1, B, cfg["hbar"], **opt)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"plant: {exc}") from None
