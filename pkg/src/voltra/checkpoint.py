"""Checkpoint files: model spec plus parameter groups in decimal text.

Values are serialized with 17 significant digits for f64 and 9 for f32,
which round-trips both exactly; save -> load -> save reproduces identical
bytes. Version mismatches are rejected outright rather than coerced.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dynamics import atomic_write_text
from .errors import CheckpointFormatError
from .layers import ModelSpec
from .params import ParamGroup, ParamStore, group_shape
from .precision import PRECISIONS, precision_name

FORMAT_VERSION = 1

_SIG_DIGITS = {"f32": 9, "f64": 17}


def _fmt_value(x: float, precision: str) -> str:
    return format(float(x), f".{_SIG_DIGITS[precision]}g")


def config_hash(config: dict) -> str:
    """Stable hash of a flat config mapping."""
    canon = "\n".join(f"{k} = {config[k]}" for k in sorted(config))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def save_checkpoint(path, spec: ModelSpec, store: ParamStore, metadata: dict | None = None) -> None:
    precision = precision_name(store.dtype)
    doc = {
        "format_version": FORMAT_VERSION,
        "model": {
            "kind": spec.kind,
            "d": spec.d,
            "n_blocks": spec.n_blocks,
            "n_linear": spec.n_linear,
            "n_units": spec.n_units,
            "seq_len": spec.seq_len,
        },
        "precision": precision,
        "groups": [
            {
                "name": g.name,
                "kind": g.kind,
                "dim": g.dim,
                "values": [_fmt_value(x, precision) for x in g.data.reshape(-1)],
            }
            for g in store
        ],
        "metadata": dict(sorted((metadata or {}).items())),
    }
    atomic_write_text(Path(path), json.dumps(doc, indent=2) + "\n")


def load_checkpoint(path) -> tuple[ModelSpec, ParamStore, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path}: not valid JSON ({exc})") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"{path}: format version {version!r} is not supported (expected {FORMAT_VERSION})"
        )
    precision = doc.get("precision")
    if precision not in PRECISIONS:
        raise CheckpointFormatError(f"{path}: unknown precision {precision!r}")
    dtype = PRECISIONS[precision]
    try:
        spec = ModelSpec(**doc["model"])
        groups = []
        for g in doc["groups"]:
            shape = group_shape(g["kind"], g["dim"])
            data = np.array([float(v) for v in g["values"]], dtype=np.float64)
            groups.append(ParamGroup(g["name"], g["kind"], g["dim"], data.astype(dtype).reshape(shape)))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: malformed checkpoint ({exc})") from exc
    return spec, ParamStore(groups), doc.get("metadata", {})
