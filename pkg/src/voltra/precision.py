"""Precision policy.

Training defaults to single precision; structural invariant checks
(orthogonality residuals, Jacobian determinants) run in double so that
float round-off is not mistaken for a structural defect. The environment
variable ``VOLTRA_PRECISION`` overrides the default for CLI runs.
"""

from __future__ import annotations

import os

import numpy as np

ENV_VAR = "VOLTRA_PRECISION"

PRECISIONS = {
    "f32": np.float32,
    "f64": np.float64,
}


def default_precision() -> str:
    """Precision name from the environment, falling back to f32."""
    name = os.environ.get(ENV_VAR, "f32")
    if name not in PRECISIONS:
        raise ValueError(
            f"{ENV_VAR} must be one of {sorted(PRECISIONS)}, got {name!r}"
        )
    return name


def resolve_dtype(precision: str | None = None) -> np.dtype:
    """Map a precision name ('f32'/'f64', or None for the default) to a dtype."""
    if precision is None:
        precision = default_precision()
    if precision not in PRECISIONS:
        raise ValueError(f"unknown precision {precision!r}; expected one of {sorted(PRECISIONS)}")
    return np.dtype(PRECISIONS[precision])


def precision_name(dtype) -> str:
    dtype = np.dtype(dtype)
    for name, dt in PRECISIONS.items():
        if np.dtype(dt) == dtype:
            return name
    raise ValueError(f"unsupported dtype {dtype}")
