"""Autoregressive rollout, invariant tracking, and the numeric
volume-preservation verifier.

Rollouts advance the model's natural stride: transformers emit a window of
T new states per call (the output window becomes the next input), the
feedforward network one state per call. The reference solution on the same
time grid comes from implicit midpoint, whose norm conservation makes
I(z) = ||z||_2 the diagnostic of record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff, linalg
from .dynamics import RigidBodyParams, atomic_write_text, integrate
from .errors import NonFiniteStateError
from .layers import ModelSpec, forward_numpy, forward_tape
from .params import ParamStore
from .rng import SplitMix64, derive_seed

FD_JACOBIAN_STEP = 1e-5
VOLUME_TOL = 1e-6


@dataclass(frozen=True)
class RolloutResult:
    """Predicted vs reference trajectory on one shared time grid."""

    times: np.ndarray
    predicted: np.ndarray
    reference: np.ndarray
    invariants: np.ndarray
    errors: np.ndarray
    seed_len: int

    def __len__(self) -> int:
        return self.predicted.shape[0]


@dataclass(frozen=True)
class RolloutSummary:
    max_error: float
    mean_error: float
    max_invariant_deviation: float
    first_exceed_index: int | None
    threshold: float


def invariant_series(states: np.ndarray) -> np.ndarray:
    """Euclidean norm of each state row."""
    states = np.asarray(states)
    return np.sqrt((states.astype(np.float64) ** 2).sum(axis=-1))


def _seed_states(spec, coeffs, z0, h, seed_with):
    z0 = np.asarray(z0, dtype=np.float64)
    if spec.kind == "vpff":
        return [z0]
    states = [z0]
    if seed_with == "midpoint":
        ref = integrate(coeffs, z0, h, spec.seq_len - 1)
        states.extend(ref.states[1:])
        return states
    seeder_spec, seeder_store = seed_with
    if seeder_spec.kind != "vpff":
        raise ValueError("network seeding requires a feedforward model")
    z = z0
    for _ in range(spec.seq_len - 1):
        z = forward_numpy(seeder_spec, seeder_store, z.astype(seeder_store.dtype)).astype(np.float64)
        states.append(z)
    return states


def rollout(
    spec: ModelSpec,
    store: ParamStore,
    coeffs: RigidBodyParams,
    z0: np.ndarray,
    h: float = 0.2,
    n_steps: int = 500,
    seed_with="midpoint",
) -> RolloutResult:
    """Autoregressive prediction over n_steps time steps, with reference.

    Transformers receive spec.seq_len seed states (the initial condition
    plus implicit-midpoint steps, unless a feedforward model is handed in
    via seed_with); the feedforward network receives the initial condition
    only. The result always covers times 0 .. max(n_steps, seed_len-1) * h.
    """
    states = _seed_states(spec, coeffs, z0, h, seed_with)
    seed_len = len(states)
    total = max(n_steps + 1, seed_len)
    dtype = store.dtype
    if spec.kind == "vpff":
        z = states[0].astype(dtype)
        while len(states) < total:
            z = forward_numpy(spec, store, z)
            if not np.isfinite(z).all():
                raise NonFiniteStateError(f"rollout produced non-finite state at step {len(states)}")
            states.append(z.astype(np.float64))
    else:
        window = np.stack(states[-spec.seq_len :], axis=1).astype(dtype)
        while len(states) < total:
            window = forward_numpy(spec, store, window)
            if not np.isfinite(window).all():
                raise NonFiniteStateError(f"rollout produced non-finite state at step {len(states)}")
            for col in range(window.shape[1]):
                states.append(window[:, col].astype(np.float64))
        states = states[:total]
    predicted = np.stack(states)
    reference = integrate(coeffs, np.asarray(z0, dtype=np.float64), h, total - 1).states
    times = h * np.arange(total)
    errors = np.sqrt(((predicted - reference) ** 2).sum(axis=-1))
    return RolloutResult(
        times=times,
        predicted=predicted,
        reference=reference,
        invariants=invariant_series(predicted),
        errors=errors,
        seed_len=seed_len,
    )


def rollout_error(result: RolloutResult, threshold: float = 0.1) -> RolloutSummary:
    """Summary metrics; invariant deviation is measured against ||z0||."""
    target = float(invariant_series(result.reference[:1])[0])
    deviations = np.abs(result.invariants - target)
    exceed = np.nonzero(result.errors > threshold)[0]
    return RolloutSummary(
        max_error=float(result.errors.max()),
        mean_error=float(result.errors.mean()),
        max_invariant_deviation=float(deviations.max()),
        first_exceed_index=int(exceed[0]) if exceed.size else None,
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# Volume-preservation verifier
# ---------------------------------------------------------------------------

def _model_input(spec: ModelSpec, flat: np.ndarray) -> np.ndarray:
    if spec.kind == "vpff":
        return flat.reshape(spec.d, 1)
    return flat.reshape(spec.d, spec.seq_len)


def jacobian_ad(spec: ModelSpec, store: ParamStore, z: np.ndarray) -> np.ndarray:
    """Jacobian of the forward map via the tape, rows/cols in row-major
    (product-space) vectorization order."""
    tape = autodiff.Tape()
    out, _, z_leaf = forward_tape(
        tape, spec, store, np.asarray(z), input_requires_grad=True, params_require_grad=False
    )
    return autodiff.jacobian(out, z_leaf)


def jacobian_fd(
    spec: ModelSpec, store: ParamStore, z: np.ndarray, step: float = FD_JACOBIAN_STEP
) -> np.ndarray:
    """Central-difference Jacobian through the numpy forward path."""
    z = np.asarray(z, dtype=np.float64)
    flat = z.reshape(-1)
    n = flat.size
    # row-major flattening matches the product-space vectorization; the
    # feedforward map is evaluated on bare state vectors
    shape = (spec.d,) if spec.kind == "vpff" else (spec.d, spec.seq_len)
    jac = np.zeros((n, n))
    for k in range(n):
        bump = np.zeros(n)
        bump[k] = step
        up = forward_numpy(spec, store, (flat + bump).reshape(shape)).reshape(-1)
        down = forward_numpy(spec, store, (flat - bump).reshape(shape)).reshape(-1)
        jac[:, k] = (up - down) / (2.0 * step)
    return jac


@dataclass(frozen=True)
class VolumeSample:
    index: int
    det_ad: float
    det_fd: float


@dataclass(frozen=True)
class VolumeReport:
    """Per-sample Jacobian determinants computed along two routes."""

    kind: str
    samples: tuple[VolumeSample, ...]
    structural: bool  # whether the architecture guarantees det = 1

    @property
    def max_unit_deviation(self) -> float:
        return max((abs(s.det_ad - 1.0) for s in self.samples), default=0.0)

    @property
    def max_route_gap(self) -> float:
        return max((abs(s.det_ad - s.det_fd) for s in self.samples), default=0.0)


def verify_volume_preservation(
    spec: ModelSpec,
    store: ParamStore,
    n_samples: int = 10,
    seed: int = 0,
    fd_step: float = FD_JACOBIAN_STEP,
) -> VolumeReport:
    """|det J - 1| at seeded sample inputs, via tape and central differences.

    Runs in double precision regardless of the checkpoint precision; casting
    packed parameters cannot break the structural zero patterns.
    """
    work = store.astype(np.float64)
    stream = SplitMix64(derive_seed(seed, "volume-samples"))
    size = spec.d if spec.kind == "vpff" else spec.d * spec.seq_len
    samples = []
    for i in range(n_samples):
        z = _model_input(spec, stream.uniforms(size, -1.0, 1.0))
        det_ad = float(linalg.det(jacobian_ad(spec, work, z)))
        det_fd = float(linalg.det(jacobian_fd(spec, work, z, fd_step)))
        samples.append(VolumeSample(i, det_ad, det_fd))
    return VolumeReport(kind=spec.kind, samples=tuple(samples), structural=spec.kind != "st")


def output_rank_report(
    spec: ModelSpec, store: ParamStore, n_samples: int = 10, seed: int = 0
) -> list[dict]:
    """Rank and condition number of output windows; a diagnostic for why
    softmax attention can collapse. No threshold is enforced."""
    work = store.astype(np.float64)
    stream = SplitMix64(derive_seed(seed, "rank-samples"))
    size = spec.d * spec.seq_len
    out = []
    for i in range(n_samples):
        z = _model_input(spec, stream.uniforms(size, -1.0, 1.0))
        window = forward_numpy(spec, work, z)
        svals = np.linalg.svd(window, compute_uv=False)
        tol = svals.max() * max(window.shape) * np.finfo(np.float64).eps
        rank = int((svals > tol).sum())
        cond = float(svals.max() / svals.min()) if svals.min() > 0 else float("inf")
        out.append({"sample": i, "singular_values": svals.tolist(), "rank": rank, "cond": cond})
    return out


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

ROLLOUT_HEADER = "t,z1,z2,z3,ref1,ref2,ref3,invariant,error"


def write_rollout_csv(path, result: RolloutResult) -> None:
    fmt = lambda x: format(float(x), ".17g")
    lines = [ROLLOUT_HEADER]
    for k in range(len(result)):
        row = (
            [result.times[k]]
            + list(result.predicted[k])
            + list(result.reference[k])
            + [result.invariants[k], result.errors[k]]
        )
        lines.append(",".join(fmt(x) for x in row))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_rollout_csv(path) -> RolloutResult:
    rows = Path(path).read_text().strip().split("\n")
    if rows[0] != ROLLOUT_HEADER:
        raise ValueError(f"{path}: unexpected rollout header {rows[0]!r}")
    data = np.array([[float(x) for x in row.split(",")] for row in rows[1:]])
    return RolloutResult(
        times=data[:, 0],
        predicted=data[:, 1:4],
        reference=data[:, 4:7],
        invariants=data[:, 7],
        errors=data[:, 8],
        seed_len=1,
    )


def write_volume_report(path, report: VolumeReport) -> None:
    doc = {
        "kind": report.kind,
        "structural": report.structural,
        "max_unit_deviation": report.max_unit_deviation,
        "max_route_gap": report.max_route_gap,
        "samples": [
            {"index": s.index, "det_ad": s.det_ad, "det_fd": s.det_fd} for s in report.samples
        ],
    }
    atomic_write_text(Path(path), json.dumps(doc, indent=2) + "\n")
