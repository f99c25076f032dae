"""Artifact IO: deterministic CSV/JSON writers, config schema, manifests.

CSV bodies are the determinism contract: floats print at full round-trip
precision ("%.17g"), rows are written in a fixed order, and nothing
machine-specific (timestamps, wall clock) enters them. Manifests carry the
reproduction metadata instead; their wall-clock field is excluded from any
byte-identity claim.
"""

from __future__ import annotations

import json
import math
import os
import platform
import time
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

EXPERIMENTS = ("k1", "ks", "ops", "md", "bg-sweep", "noncomm", "chaos",
               "relax", "entropy")


def _format_cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv(path, header, rows) -> None:
    """Write rows with a header line; full float precision, LF newlines."""
    path = Path(path)
    lines = [",".join(str(h) for h in header)]
    for row in rows:
        lines.append(",".join(_format_cell(c) for c in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_json(path, obj) -> None:
    """Sorted-key, indented JSON; numpy scalars and arrays made plain."""
    Path(path).write_text(
        json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# config schema


_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "experiment", "seed"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "threads": {"type": "integer", "minimum": 1},
        "model": {
            "type": "object",
            "required": ["n", "sigma", "box"],
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "sigma": _NONNEG,
                "box": _POSITIVE,
            },
            "additionalProperties": False,
        },
        "sequence": {
            "type": "object",
            "required": ["c", "box", "ns"],
            "properties": {
                "c": _POSITIVE,
                "box": _POSITIVE,
                "ns": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 2},
                    "minItems": 2,
                },
            },
            "additionalProperties": False,
        },
        "pdf": {
            "type": "object",
            "required": ["family"],
            "properties": {
                "family": {
                    "enum": ["uniform_maxwell", "drifted_maxwell",
                             "tilted_exponential", "sinusoidal_maxwell",
                             "velocity_mixture", "tabulated"],
                },
                "v_th": _POSITIVE,
                "u0": {"type": "array", "items": {"type": "number"},
                       "minItems": 3, "maxItems": 3},
                "shear_rate": {"type": "number"},
                "tilt": {"type": "array", "items": {"type": "number"},
                         "minItems": 3, "maxItems": 3},
                "alpha": {"type": "number",
                          "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                "phase": {"type": "number"},
                "axis": {"type": "integer", "minimum": 0, "maximum": 2},
                "components": {"type": "array"},
                "path": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "quadrature": {
            "type": "object",
            "properties": {
                "v_max": {"type": "number", "minimum": 4},
                "velocity_nodes": {"type": "integer", "minimum": 8},
                "angle_nodes": {"type": "integer", "minimum": 8},
                "position_nodes": {"type": "integer", "minimum": 2},
                "mode": {"enum": ["deterministic", "mc"]},
                "seed": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "k1": {
            "type": "object",
            "properties": {
                "grid_nodes": {"type": "integer", "minimum": 2},
                "samples_per_node": {"type": "integer", "minimum": 1000},
                "tol": _POSITIVE,
            },
            "additionalProperties": False,
        },
        "ks": {
            "type": "object",
            "properties": {
                "tuple_count": {"type": "integer", "minimum": 1},
                "separation_factor": {"type": "number",
                                      "exclusiveMinimum": 1},
                "samples": {"type": "integer", "minimum": 1000},
            },
            "additionalProperties": False,
        },
        "ops": {
            "type": "object",
            "properties": {
                "probes": {"type": "integer", "minimum": 1},
                "rho2_form": {"enum": ["pair_over_k1sq", "hat_product"]},
                "flavor": {"enum": ["master", "boltzmann", "both"]},
            },
            "additionalProperties": False,
        },
        "md": {
            "type": "object",
            "properties": {
                "t_end": _POSITIVE,
                "max_events": {"type": "integer", "minimum": 1},
                "snapshots": {"type": "integer", "minimum": 0},
                "equilibration_fraction": {"type": "number", "minimum": 0,
                                           "maximum": 0.9},
                "record_cap": {"type": "integer", "minimum": 0},
                "audit_every": {"type": "integer", "minimum": 0},
                "windows": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "relax": {
            "type": "object",
            "properties": {
                "t_end": _POSITIVE,
                "grid_nodes": {"type": "integer", "minimum": 8},
                "v_max": _POSITIVE,
                "cfl": _POSITIVE,
                "dt": _POSITIVE,
                "stride": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "bg": {
            "type": "object",
            "properties": {
                "tuple_count": {"type": "integer", "minimum": 1},
                "samples": {"type": "integer", "minimum": 1000},
                "probes": {"type": "integer", "minimum": 1},
                "oracle_samples": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def validate_config(config: dict) -> list:
    """Schema violations as '<json path>: <message>' strings (empty = valid)."""
    import jsonschema

    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(config), key=lambda e: e.json_path):
        out.append(f"{err.json_path}: {err.message}")
    return out


# ---------------------------------------------------------------------------
# output layout


def resolve_out_dir(out_dir) -> Path:
    path = Path(out_dir).resolve()
    path.mkdir(parents=True, exist_ok=True)
    return path


def artifact_path(out_dir: Path, name: str) -> Path:
    """Join and refuse anything that escapes the output directory."""
    out_dir = Path(out_dir).resolve()
    p = (out_dir / name).resolve()
    if not p.is_relative_to(out_dir):
        raise ValueError(f"artifact name {name!r} escapes the output dir")
    return p


def build_manifest(config: dict, *, seed: int, artifacts, wall_clock_s: float,
                   extra: dict | None = None) -> dict:
    """Reproduction metadata. wall_clock_s is informational, not deterministic."""
    from . import __version__

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": _jsonable(config),
        "root_seed": int(seed),
        "artifacts": sorted(str(a) for a in artifacts),
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "wall_clock_s": float(wall_clock_s),
        "written_at_unix": int(time.time()),
    }
    if extra:
        manifest["extra"] = _jsonable(extra)
    return manifest


def relative_artifacts(out_dir: Path, names) -> list:
    return [str(Path(n).name) for n in names]


def ensure_no_stray_writes(out_dir: Path, before: set, after: set) -> None:
    """Guard hook for tests: everything new must be inside out_dir."""
    new = after - before
    out_dir = Path(out_dir).resolve()
    for p in new:
        if not Path(p).resolve().is_relative_to(out_dir):
            raise RuntimeError(f"stray write outside the output dir: {p}")


def pdf_config_box(config: dict, default: float) -> float:
    model = config.get("model")
    if model:
        return float(model["box"])
    seq = config.get("sequence")
    if seq:
        return float(seq["box"])
    return default
