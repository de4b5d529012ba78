"""Run configuration: JSON schema, defaults, and model-object builders.

A run is described by a single JSON document.  Validation is strict
(unknown keys are rejected everywhere) and failures carry the dotted
path of the offending field.  ``resolve`` fills in documented defaults
so the echoed ``run.json`` pins every value the run actually used;
feeding that file back reproduces the run.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .carleman import LEMMA_IDS
from .errors import ConfigError, FracinvError
from .expressions import compile_expression
from .model import EllipticCoefficients, Grid, ModelParams, ObservationGeometry, build_grid

EXPERIMENTS = (
    "forward",
    "convergence",
    "transform-check",
    "carleman-scan",
    "invert-source",
    "invert-zeroth",
    "invert-diffusion",
    "stability",
)

# the experiment-specific block each experiment reads
EXPERIMENT_BLOCKS = {
    "forward": "forward",
    "convergence": "convergence",
    "transform-check": "transform",
    "carleman-scan": "carleman",
    "invert-source": "inversion",
    "invert-zeroth": "inversion",
    "invert-diffusion": "inversion",
    "stability": "stability",
}

_EXPR = {"type": ["string", "number"]}
_INTERVAL = {
    "type": "array",
    "items": {"type": "number"},
    "minItems": 2,
    "maxItems": 2,
}
_INT_LADDER = {
    "type": "array",
    "items": {"type": "integer", "minimum": 16},
    "minItems": 2,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "model", "grid", "output_dir"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string", "minLength": 1},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rho1", "rho2", "T", "t0", "delta"],
            "properties": {
                "rho1": {"type": "number", "exclusiveMinimum": 0},
                "rho2": {"type": "number", "not": {"const": 0}},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "t0": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["nx", "nt"],
            "properties": {
                "nx": {"type": "integer", "minimum": 16},
                "nt": {"type": "integer", "minimum": 16},
            },
        },
        "coefficients": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"a": _EXPR, "b": _EXPR, "c": _EXPR},
        },
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma_side": {"enum": ["left", "right"]},
                "omega": _INTERVAL,
                "omega0": _INTERVAL,
                "d_prime": _INTERVAL,
            },
        },
        "forward": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "manufactured": {"type": "boolean"},
                "source": _EXPR,
            },
        },
        "convergence": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "axes": {
                    "type": "array",
                    "items": {"enum": ["temporal", "spatial"]},
                    "minItems": 1,
                },
                "temporal_nt": _INT_LADDER,
                "temporal_nx": {"type": "integer", "minimum": 16},
                "spatial_nx": _INT_LADDER,
                "spatial_nt": {"type": "integer", "minimum": 16},
            },
        },
        "transform": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nt_pair": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 32},
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
        },
        "carleman": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lemmas": {
                    "type": "array",
                    "items": {"enum": list(LEMMA_IDS)},
                    "minItems": 1,
                },
                "lambdas": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 1,
                },
                "s_min": {"type": "number", "exclusiveMinimum": 0},
                "s_max": {"type": "number", "exclusiveMinimum": 0},
                "s_count": {"type": "integer", "minimum": 2},
            },
        },
        "inversion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["boundary", "interior"]},
                "n_basis": {"type": "integer", "minimum": 1},
                "alpha": {
                    "anyOf": [
                        {"type": "number", "minimum": 0},
                        {"const": "discrepancy"},
                    ]
                },
                "noise_level": {"type": "number", "minimum": 0},
                "truth": _EXPR,
                "r_factor": _EXPR,
                "background_source": _EXPR,
            },
        },
        "stability": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 10},
                "kind": {"enum": ["boundary", "interior"]},
                "unknown": {"enum": ["source", "zeroth", "diffusion"]},
                "n_basis": {"type": "integer", "minimum": 1},
                "decay": {"type": "number", "minimum": 1},
                "amplitude": {"type": "number", "minimum": 0},
                "r_factor": _EXPR,
                "background_source": _EXPR,
            },
        },
    },
}

_COMMON_DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "coefficients": {"a": 1.0, "b": 0.0, "c": 0.0},
    "geometry": {
        "gamma_side": "right",
        "omega": [0.4, 0.6],
        "omega0": [0.45, 0.55],
        "d_prime": [0.1, 0.9],
    },
}

_BLOCK_DEFAULTS = {
    "forward": {"forward": {"manufactured": True}},
    "convergence": {
        "convergence": {
            "axes": ["temporal", "spatial"],
            "temporal_nt": [128, 256, 512],
            "temporal_nx": 255,
            "spatial_nx": [31, 63, 127],
            "spatial_nt": 4096,
        }
    },
    "transform-check": {"transform": {"nt_pair": [256, 512]}},
    "carleman-scan": {
        "carleman": {
            "lemmas": list(LEMMA_IDS),
            "lambdas": [1.0, 2.0, 4.0],
            "s_min": 1.0,
            "s_max": 100.0,
            "s_count": 8,
        }
    },
    "invert-source": {
        "inversion": {
            "kind": "boundary",
            "n_basis": 12,
            "alpha": 1e-10,
            "noise_level": 0.0,
            "truth": "sin(pi*x)*sin(2*pi*x)",
            "r_factor": "2 + sin(pi*x)*exp(-t)",
        }
    },
    "invert-zeroth": {
        "inversion": {
            "kind": "boundary",
            "n_basis": 12,
            "alpha": 1e-8,
            "noise_level": 0.0,
            "truth": "0.5*sin(pi*x)*sin(2*pi*x)",
            "background_source": "sin(pi*x)*(1+t)",
        }
    },
    "invert-diffusion": {
        "inversion": {
            "kind": "boundary",
            "n_basis": 12,
            "alpha": 1e-13,
            "noise_level": 0.0,
            "truth": "0.2*exp(-((x-0.5)/0.12)**2)",
            "background_source": "40*exp(-40*x)",
        }
    },
    "stability": {
        "stability": {
            "count": 10,
            "kind": "boundary",
            "unknown": "source",
            "n_basis": 12,
            "decay": 2.0,
            "amplitude": 1.0,
            "r_factor": "2 + sin(pi*x)*exp(-t)",
            "background_source": "sin(pi*x)*(1+t)",
        }
    },
}


def _error_path(err: jsonschema.exceptions.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [p for p in err.validator_value if p not in err.instance]
        if missing:
            parts.append(missing[0])
    elif err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extras = sorted(k for k in err.instance if k not in allowed)
        if extras:
            parts.append(extras[0])
    return ".".join(parts) if parts else "<root>"


def validate_config(cfg) -> None:
    """Schema-check a raw config dict; raise ConfigError with a field path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    error = jsonschema.exceptions.best_match(validator.iter_errors(cfg))
    if error is not None:
        raise ConfigError(_error_path(error), error.message)


def resolve(cfg: dict) -> dict:
    """Validated config with all documented defaults filled in.

    Only the block belonging to the named experiment receives defaults;
    run.json therefore echoes exactly the values the run consumed.
    """
    validate_config(cfg)
    out = copy.deepcopy(cfg)
    for key, default in _COMMON_DEFAULTS.items():
        if isinstance(default, dict):
            merged = dict(default)
            merged.update(out.get(key, {}))
            out[key] = merged
        else:
            out.setdefault(key, default)
    for key, default in _BLOCK_DEFAULTS[out["experiment"]].items():
        merged = dict(default)
        merged.update(out.get(key, {}))
        out[key] = merged
    return out


def load_config(path) -> dict:
    """Read and resolve a config file; all failures become ConfigError."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config file: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    return resolve(cfg)


def build_objects(cfg: dict) -> tuple[Grid, ModelParams, EllipticCoefficients, ObservationGeometry]:
    """Construct the model objects a resolved config describes.

    Cross-field violations the schema cannot express (window inside
    (0, T), interval nesting, coefficient positivity) surface here and
    are reported as config errors on the owning block.
    """
    try:
        grid = build_grid(cfg["grid"]["nx"], cfg["grid"]["nt"], cfg["model"]["T"])
    except FracinvError as exc:
        raise ConfigError("grid", str(exc)) from exc
    try:
        m = cfg["model"]
        params = ModelParams(rho1=m["rho1"], rho2=m["rho2"], T=m["T"], t0=m["t0"], delta=m["delta"])
    except FracinvError as exc:
        raise ConfigError("model", str(exc)) from exc
    try:
        co = cfg["coefficients"]
        coeffs = EllipticCoefficients.from_callables(
            grid,
            compile_expression(co["a"], ("x",), "coefficients.a"),
            compile_expression(co["b"], ("x",), "coefficients.b"),
            compile_expression(co["c"], ("x",), "coefficients.c"),
        )
    except ConfigError:
        raise
    except FracinvError as exc:
        raise ConfigError("coefficients", str(exc)) from exc
    try:
        g = cfg["geometry"]
        geometry = ObservationGeometry(
            gamma_side=g["gamma_side"],
            omega=tuple(g["omega"]),
            omega0=tuple(g["omega0"]),
            d_prime=tuple(g["d_prime"]),
        )
    except FracinvError as exc:
        raise ConfigError("geometry", str(exc)) from exc
    return grid, params, coeffs, geometry
