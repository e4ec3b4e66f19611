"""Versioned JSON checkpoints: architecture + flat values + RNG state.

Floats are written with ``repr`` precision, which round-trips float64 exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import Arch, ModelParams

FORMAT = "dgpo-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, rng_state: dict | None = None, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "arch": params.arch.to_dict(),
        "values": [float(v) for v in params.values],
        "rng_state": rng_state,
        "meta": meta or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[ModelParams, dict | None, dict]:
    """Returns (params, rng_state, meta)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({exc})") from exc
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unrecognised checkpoint format {doc.get('format')!r}")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    values = np.array(doc["values"], dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise CheckpointError(f"{path}: checkpoint holds non-finite values")
    params = ModelParams(Arch.from_dict(doc["arch"]), values)
    return params, doc.get("rng_state"), doc.get("meta", {})
