"""JSON experiment configuration: schema validation, defaults and resolution."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigurationError
from .losses import PRESET_ALIASES, PRESETS

_ORDER = {"type": "array", "items": {"type": "integer", "minimum": 0},
          "minItems": 2, "maxItems": 3}

SYNTH_SCHEMA = {
    "type": "object",
    "properties": {
        "ndim": {"enum": [2, 3]},
        "count": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 4},
        "width": {"type": "integer", "minimum": 4},
        "depth": {"type": "integer", "minimum": 4},
        "disk_radius_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "cup_ratio_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "radius_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "eccentricity": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "center_jitter": {"type": "number", "minimum": 0},
        "noise_std": {"type": "number", "minimum": 0},
        "distractor_count": {"type": "integer", "minimum": 0},
        "distractor_style": {"enum": ["plain", "mimic"]},
        "distractor_intensity": {"type": "number", "minimum": 0, "maximum": 1},
        "seed": {"type": "integer"},
    },
    "additionalProperties": False,
}

GEN_SCHEMA = {
    "type": "object",
    "properties": {"synth": SYNTH_SCHEMA, "out": {"type": "string"}},
    "additionalProperties": False,
}

TRAIN_SCHEMA = {
    "type": "object",
    "properties": {
        "dataset": {"type": "string"},
        "synth": SYNTH_SCHEMA,
        "preset": {"enum": sorted(set(PRESETS) | set(PRESET_ALIASES))},
        "loss": {
            "type": "object",
            "properties": {
                "orders": {"type": "array", "items": _ORDER, "minItems": 1},
                "alpha": {"type": "number", "minimum": 0},
                "convention": {"enum": ["one-based", "symmetric"]},
                "normalized": {"type": "boolean"},
                "reduction": {"enum": ["sum", "mean"]},
            },
            "additionalProperties": False,
        },
        "model": {
            "type": "object",
            "properties": {
                "widths": {"type": "array", "items": {"type": "integer", "minimum": 1},
                           "minItems": 3, "maxItems": 3},
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
            "additionalProperties": False,
        },
        "sgd": {
            "type": "object",
            "properties": {
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "iterations": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "standardize": {"type": "boolean"},
        "parallel": {"type": "boolean"},
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}

EVAL_SCHEMA = {
    "type": "object",
    "properties": {
        "checkpoint": {"type": "string"},
        "dataset": {"type": "string"},
        "standardize": {"type": "boolean"},
        "overlays": {"type": "boolean"},
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}

DEFAULTS_2D = {
    "model": {"widths": [8, 16, 32], "dropout": 0.1},
    "sgd": {"learning_rate": 0.01, "iterations": 2400, "batch_size": 2},
    "preset": "rm",
}
DEFAULTS_3D = {
    "model": {"widths": [4, 8, 16], "dropout": 0.1},
    "sgd": {"learning_rate": 0.01, "iterations": 100, "batch_size": 2},
    "preset": "rm",
}


def load_json(path):
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}", field="config")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})", field="config") from exc


def validate(config, schema):
    try:
        jsonschema.validate(config, schema)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        if exc.validator == "additionalProperties":
            where = exc.message.split("'")[1] if "'" in exc.message else where
        raise ConfigurationError(f"config field {where}: {exc.message}", field=where) from exc
    return config


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_train(config, ndim):
    """Fill defaults for a validated train config of the given rank."""
    resolved = _merge(DEFAULTS_2D if ndim == 2 else DEFAULTS_3D, config)
    resolved.setdefault("seeds", [0])
    resolved.setdefault("standardize", ndim == 3)
    resolved.setdefault("parallel", False)
    resolved.setdefault("loss", {})
    return resolved
