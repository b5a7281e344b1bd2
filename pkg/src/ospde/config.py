"""Run configuration: a single JSON document, schema-checked before anything runs."""
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .coefficients import (
    COEFFICIENTS, CoefficientSet, ObstacleSpec, ProblemSpec, make_field,
)
from .grid import EllipticCoefficients, assemble_operator, build_grid
from .verify import CHECKS


class ConfigError(ValueError):
    """Invalid configuration; ``block`` names the offending top-level block."""

    def __init__(self, block, message):
        super().__init__(f"[{block}] {message}")
        self.block = block


_NUM = {"type": "number"}
_COEF = {
    "type": "object",
    "properties": {"name": {"type": "string"}},
    "required": ["name"],
}
_FIELD = {"oneOf": [_NUM, {"type": "array", "items": _NUM}, {
    "type": "object", "properties": {"name": {"enum": ["constant", "cosine", "gaussian", "linear"]}},
    "required": ["name"],
}]}
_COEF_BLOCK = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "f": _COEF,
        "g": {"type": "array", "items": _COEF},
        "h": {"type": "array", "items": _COEF},
        "l": _COEF,
        "declared": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "number", "minimum": 0} for k in ("C", "alpha", "beta", "theta")},
            "required": ["C", "alpha", "beta", "theta"],
        },
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["grid", "time"],
    "properties": {
        "name": {"type": "string"},
        "grid": {
            "type": "object", "additionalProperties": False,
            "required": ["dimension", "extents", "cells"],
            "properties": {
                "dimension": {"enum": [1, 2]},
                "extents": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "cells": {"oneOf": [
                    {"type": "integer", "minimum": 2},
                    {"type": "array", "items": {"type": "integer", "minimum": 2}},
                ]},
                "a": {"oneOf": [
                    {"type": "number", "exclusiveMinimum": 0},
                    {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                ]},
            },
        },
        "time": {
            "type": "object", "additionalProperties": False, "required": ["T", "dt"],
            "properties": {"T": {"type": "number", "exclusiveMinimum": 0},
                           "dt": {"type": "number", "exclusiveMinimum": 0}},
        },
        "noise": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "J": {"type": "integer", "minimum": 0},
                "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "seed_count": {"type": "integer", "minimum": 1},
                "base_seed": {"type": "integer", "minimum": 0},
            },
        },
        "initial": _FIELD,
        "coefficients": _COEF_BLOCK,
        "obstacle": {"oneOf": [{"type": "null"}, {
            "type": "object", "additionalProperties": False, "required": ["mode"],
            "properties": {
                "mode": {"enum": ["direct", "driven"]},
                "values": _FIELD,
                "offset": {"type": "number", "maximum": 0},
                "S0": _FIELD,
                "coefficients": _COEF_BLOCK,
            },
        }]},
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n_schedule": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "tol_picard": {"type": "number", "exclusiveMinimum": 0},
                "max_picard": {"type": "integer", "minimum": 1},
                "inner_max": {"type": "integer", "minimum": 1},
                "inner_tol": {"type": "number", "exclusiveMinimum": 0},
                "safety": {"type": "number", "minimum": 0},
            },
        },
        "checks": {"oneOf": [
            {"type": "array", "items": {"type": "string"}},
            {
                "type": "object", "additionalProperties": False, "required": ["run"],
                "properties": {
                    "run": {"type": "array", "items": {"type": "string"}},
                    "paths": {"type": "integer", "minimum": 100},
                    "levels": {"type": "integer", "minimum": 3},
                    "phi": {"enum": ["square", "logcosh"]},
                    "stability": {"type": "number", "exclusiveMinimum": 0},
                    "comparison": {
                        "type": "object", "additionalProperties": False,
                        "properties": {k: {"type": "number", "minimum": 0} for k in ("xi", "f", "l", "S")},
                    },
                },
            },
        ]},
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "trajectories": {"type": "integer", "minimum": 0}},
        },
    },
}

SOLVER_DEFAULTS = {
    "n_schedule": [10.0, 100.0, 1000.0, 10000.0],
    "tol_picard": 1e-8,
    "max_picard": 100,
    "inner_max": 50,
    "inner_tol": 1e-10,
    "safety": 0.05,
}
CHECK_DEFAULTS = {"paths": 100, "levels": 3, "phi": "square", "stability": 0.25, "comparison": {}}


def validate(doc):
    """Schema and cross-field checks; raises :class:`ConfigError`."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as e:
        block = e.absolute_path[0] if e.absolute_path else "config"
        if e.validator == "additionalProperties" and not e.absolute_path:
            block = "config"
        raise ConfigError(block, e.message) from None
    g = doc["grid"]
    d = g["dimension"]
    if len(g["extents"]) != d:
        raise ConfigError("grid", f"extents has {len(g['extents'])} entries for dimension {d}")
    if isinstance(g["cells"], list) and len(g["cells"]) != d:
        raise ConfigError("grid", f"cells has {len(g['cells'])} entries for dimension {d}")
    t = doc["time"]
    ratio = t["T"] / t["dt"]
    if abs(ratio - round(ratio)) > 1e-12 * max(1.0, ratio):
        raise ConfigError("time", f"T / dt = {ratio!r} is not an integer")
    for block, coefs in _coefficient_blocks(doc):
        for c in coefs:
            if c["name"] not in COEFFICIENTS:
                raise ConfigError(block, f"unknown coefficient {c['name']!r}")
    for name in check_names(doc):
        if name not in CHECKS:
            raise ConfigError("checks", f"unknown check {name!r}")
    obs = doc.get("obstacle")
    if obs:
        if obs["mode"] == "direct" and "values" not in obs:
            raise ConfigError("obstacle", "direct obstacle needs 'values'")
        if obs["mode"] == "driven" and ("S0" not in obs or "coefficients" not in obs):
            raise ConfigError("obstacle", "driven obstacle needs 'S0' and 'coefficients'")
    return doc


def _coefficient_blocks(doc):
    for block, c in (("coefficients", doc.get("coefficients")), ("obstacle", (doc.get("obstacle") or {}).get("coefficients"))):
        if c:
            yield block, [v for k in ("f", "l") if k in c for v in [c[k]]] + c.get("g", []) + c.get("h", [])


def check_names(doc):
    c = doc.get("checks", [])
    return list(c if isinstance(c, list) else c["run"])


def check_options(doc):
    c = doc.get("checks", [])
    opts = dict(CHECK_DEFAULTS)
    if isinstance(c, dict):
        opts.update({k: v for k, v in c.items() if k != "run"})
    return opts


def solver_options(doc):
    return {**SOLVER_DEFAULTS, **doc.get("solver", {})}


def seeds(doc):
    n = doc.get("noise", {})
    if "seeds" in n:
        return [int(s) for s in n["seeds"]]
    base = n.get("base_seed", 0)
    return list(range(base, base + n.get("seed_count", 1)))


def load(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError("config", f"cannot read {path}: {e}") from None
    return validate(doc)


def demo(name):
    """Bundled example configuration by name."""
    ref = resources.files("ospde") / "configs" / f"{name}.json"
    if not ref.is_file():
        raise ConfigError("config", f"no bundled config named {name!r}")
    return validate(json.loads(ref.read_text()))


def _coefficient_set(block):
    block = block or {}
    return CoefficientSet.build(
        f=block.get("f"), g=block.get("g", ()), h=block.get("h", ()), l=block.get("l"),
        declared=block.get("declared"),
    )


def build_spec(doc):
    """Turn a validated document into a :class:`ProblemSpec`."""
    g = doc["grid"]
    d = g["dimension"]
    cells = g["cells"] if isinstance(g["cells"], list) else [g["cells"]] * d
    try:
        grid = build_grid(d, g["extents"], cells)
        a = g.get("a", 1.0)
        ell = EllipticCoefficients.constant(grid, a=a)
        op = assemble_operator(grid, ell)
    except ValueError as e:
        raise ConfigError("grid", str(e)) from None
    try:
        coeff = _coefficient_set(doc.get("coefficients"))
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError("coefficients", str(e)) from None
    obstacle = None
    o = doc.get("obstacle")
    if o:
        try:
            if o["mode"] == "direct":
                obstacle = ObstacleSpec("direct", values=make_field(grid, o["values"]))
            else:
                obstacle = ObstacleSpec(
                    "driven", coefficients=_coefficient_set(o["coefficients"]),
                    S0=make_field(grid, o["S0"]), offset=o.get("offset", 0.0),
                )
        except (ValueError, TypeError, KeyError) as e:
            raise ConfigError("obstacle", str(e)) from None
    try:
        xi = make_field(grid, doc.get("initial"))
    except (ValueError, KeyError) as e:
        raise ConfigError("initial", str(e)) from None
    t = doc["time"]
    J = doc.get("noise", {}).get("J", 0)
    try:
        return ProblemSpec(grid, op, coeff, xi, t["T"], t["dt"], J=J, obstacle=obstacle)
    except ValueError as e:
        raise ConfigError("obstacle" if obstacle is not None and "S_0" in str(e) else "time", str(e)) from None
