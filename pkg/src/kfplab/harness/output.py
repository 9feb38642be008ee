"""CSV emission: ``#`` header comments, a header row, 17-significant-digit floats."""
from __future__ import annotations

import io
import json
import math
from pathlib import Path

import numpy as np

from .. import __version__
from .config import ExperimentConfig
from .experiments import ExperimentResult


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def render_csv(cfg: ExperimentConfig, result: ExperimentResult) -> str:
    buf = io.StringIO()
    buf.write(f"# kfp-lab {__version__}\n")
    buf.write(f"# experiment: {result.experiment}\n")
    buf.write(f"# config: {cfg.to_json()}\n")
    buf.write(f"# summary: {json.dumps(_json_safe(result.meta), sort_keys=True, separators=(',', ':'))}\n")
    buf.write(",".join(result.columns) + "\n")
    for row in result.rows:
        buf.write(",".join(format_value(v) for v in row) + "\n")
    return buf.getvalue()


def schema(result: ExperimentResult) -> dict:
    return {
        "experiment": result.experiment,
        "tool_version": __version__,
        "comment_prefix": "#",
        "float_format": "17 significant digits",
        "columns": [
            {"name": c, "description": result.descriptions.get(c, c)} for c in result.columns
        ],
    }


def write_outputs(cfg: ExperimentConfig, result: ExperimentResult, out_path) -> Path:
    """Write the CSV and a ``<out>.schema.json`` column description next to it."""
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_csv(cfg, result))
    schema_path = out.with_name(out.name + ".schema.json")
    schema_path.write_text(json.dumps(schema(result), indent=2, sort_keys=True) + "\n")
    return out
