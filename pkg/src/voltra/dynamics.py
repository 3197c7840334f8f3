"""Rigid-body dynamics, the implicit-midpoint reference integrator, and
training-data construction.

The vector field dz/dt = (a*z2*z3, b*z1*z3, c*z1*z2) is divergence-free for
any coefficients because each component is independent of its own variable.
Implicit midpoint preserves quadratic invariants, so reference trajectories
keep ||z||_2 constant up to solver tolerance and round-off; that makes the
norm a sharp oracle for everything downstream.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linalg
from .errors import (
    NewtonDivergedError,
    TrajectoryTooShortError,
    ZeroMomentError,
)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class RigidBodyParams:
    """Coefficients of the rigid-body field."""

    a: float = 1.0
    b: float = -0.5
    c: float = -0.5


PAPER_COEFFS = RigidBodyParams(1.0, -0.5, -0.5)
PAPER_MOMENTS = (1.0, 2.0, 2.0 / 3.0)


def moments_to_coeffs(i1: float, i2: float, i3: float) -> RigidBodyParams:
    """Difference-of-reciprocal formulas mapping moments of inertia to (a, b, c)."""
    if i1 == 0 or i2 == 0 or i3 == 0:
        raise ZeroMomentError(f"moments of inertia must be nonzero, got ({i1}, {i2}, {i3})")
    return RigidBodyParams(1.0 / i3 - 1.0 / i2, 1.0 / i1 - 1.0 / i3, 1.0 / i2 - 1.0 / i1)


def rigid_body_field(p: RigidBodyParams, z: np.ndarray) -> np.ndarray:
    """(a*z2*z3, b*z1*z3, c*z1*z2); supports stacked states on the last axis."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    out[..., 0] = p.a * z[..., 1] * z[..., 2]
    out[..., 1] = p.b * z[..., 0] * z[..., 2]
    out[..., 2] = p.c * z[..., 0] * z[..., 1]
    return out


def rigid_body_jacobian(p: RigidBodyParams, z: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of the field at z; zero diagonal by construction."""
    z1, z2, z3 = np.asarray(z, dtype=np.float64)
    return np.array(
        [
            [0.0, p.a * z3, p.a * z2],
            [p.b * z3, 0.0, p.b * z1],
            [p.c * z2, p.c * z1, 0.0],
        ]
    )


def implicit_midpoint_step(
    p: RigidBodyParams,
    z: np.ndarray,
    h: float,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> np.ndarray:
    """One implicit-midpoint step solved by Newton iteration.

    Solves w = z + h*f((z + w)/2) starting from the explicit-Euler
    predictor, with the analytic field Jacobian. Raises NewtonDivergedError
    if the residual infinity norm does not fall below tol in max_iter steps.
    """
    if h == 0.0:
        return np.asarray(z, dtype=np.float64).copy()
    z = np.asarray(z, dtype=np.float64)
    w = z + h * rigid_body_field(p, z)
    eye = np.eye(3)
    for _ in range(max_iter):
        mid = 0.5 * (z + w)
        residual = w - z - h * rigid_body_field(p, mid)
        if np.abs(residual).max() < tol:
            return w
        jac = eye - 0.5 * h * rigid_body_jacobian(p, mid)
        w = w - linalg.explicit_inverse(jac) @ residual
    mid = 0.5 * (z + w)
    residual = w - z - h * rigid_body_field(p, mid)
    if np.abs(residual).max() < tol:
        return w
    raise NewtonDivergedError(
        f"implicit midpoint failed at z={z.tolist()}, h={h}: residual {np.abs(residual).max():.3e}"
    )


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled solution curve: times (n,), states (n, 3)."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "states", np.asarray(self.states, dtype=np.float64))
        if self.states.ndim != 2 or self.times.shape[0] != self.states.shape[0]:
            raise ValueError(
                f"trajectory shapes inconsistent: times {self.times.shape}, states {self.states.shape}"
            )
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if steps[0] <= 0 or np.abs(steps - steps[0]).max() > 1e-12:
                raise ValueError("trajectory times must increase with a uniform step")

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self) -> int:
        return self.states.shape[0]


def integrate(
    p: RigidBodyParams, z0: np.ndarray, h: float, n_steps: int, tol: float = NEWTON_TOL
) -> Trajectory:
    """Implicit-midpoint trajectory with n_steps steps from z0 (f64 throughout)."""
    if h <= 0:
        raise ValueError("step size must be positive")
    states = np.empty((n_steps + 1, 3))
    states[0] = np.asarray(z0, dtype=np.float64)
    for n in range(n_steps):
        states[n + 1] = implicit_midpoint_step(p, states[n], h, tol=tol)
    times = h * np.arange(n_steps + 1)
    return Trajectory(times, states)


# ---------------------------------------------------------------------------
# Initial-condition grid and dataset generation
# ---------------------------------------------------------------------------

IC_FAMILIES = ("x", "y")
DEFAULT_GRID_START = 0.1
DEFAULT_GRID_STOP = 2.0 * math.pi
DEFAULT_GRID_STEP = 0.01
DESK_GRID_STEP = 0.1
DEFAULT_TIME_STEP = 0.2
DEFAULT_T_FINAL = 12.0


def ic_grid(
    start: float = DEFAULT_GRID_START,
    stop: float = DEFAULT_GRID_STOP,
    step: float = DEFAULT_GRID_STEP,
) -> np.ndarray:
    """Arithmetic parameter grid start, start+step, ...

    The number of points is round((stop - start) / step) + 1, so the last
    value may overshoot stop by at most half a step. For the default step
    0.01 this gives the 619 values ending at 6.28 (inside 2*pi); coarser
    desk-scale steps keep the intended point count instead of dropping the
    endpoint to round-off.
    """
    if step <= 0:
        raise ValueError("grid step must be positive")
    if stop < start:
        raise ValueError("grid stop must not precede start")
    count = int(round((stop - start) / step)) + 1
    return start + step * np.arange(count)


def initial_state(family: str, v: float) -> np.ndarray:
    """Unit-sphere initial condition for one family and grid value."""
    if family == "x":
        return np.array([math.sin(v), 0.0, math.cos(v)])
    if family == "y":
        return np.array([0.0, math.sin(v), math.cos(v)])
    raise ValueError(f"unknown family {family!r}; expected one of {IC_FAMILIES}")


@dataclass(frozen=True)
class TrajectoryRecord:
    family: str
    v: float
    trajectory: Trajectory


def generate_dataset(
    grid_step: float = DEFAULT_GRID_STEP,
    h: float = DEFAULT_TIME_STEP,
    t_final: float = DEFAULT_T_FINAL,
    coeffs: RigidBodyParams = PAPER_COEFFS,
    grid_start: float = DEFAULT_GRID_START,
    grid_stop: float = DEFAULT_GRID_STOP,
) -> list[TrajectoryRecord]:
    """Reference trajectories for both initial-condition families over the grid.

    Records are ordered grid-major (for each v: family x, then family y) so
    ordering is deterministic. NewtonDivergedError is re-raised with the
    offending v attached.
    """
    if t_final < 0:
        raise ValueError("t_final must be non-negative")
    n_steps = int(round(t_final / h)) if t_final > 0 else 0
    records = []
    for v in ic_grid(grid_start, grid_stop, grid_step):
        for family in IC_FAMILIES:
            z0 = initial_state(family, v)
            try:
                traj = integrate(coeffs, z0, h, n_steps)
            except NewtonDivergedError as exc:
                raise NewtonDivergedError(f"family {family}, v={v:.6f}: {exc}") from exc
            records.append(TrajectoryRecord(family, float(v), traj))
    return records


# ---------------------------------------------------------------------------
# Training windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowBatch:
    """Stacked (input, output) training pairs.

    transformer mode: inputs/outputs have shape (n, d, T) with
    outputs[i] = states shifted by `shift` steps. feedforward mode:
    (n, d) single-step pairs.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    mode: str
    seq_len: int
    shift: int

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _windows_from_states(states: np.ndarray, seq_len: int, shift: int, stride: int):
    n = states.shape[0]
    last_start = n - (seq_len + shift)
    if last_start < 0:
        raise TrajectoryTooShortError(
            f"trajectory of length {n} cannot yield windows with T={seq_len}, shift={shift}"
        )
    for i in range(0, last_start + 1, stride):
        yield states[i : i + seq_len].T, states[i + shift : i + shift + seq_len].T


def make_windows(
    trajectories,
    seq_len: int = 3,
    shift: int | None = None,
    mode: str = "transformer",
    stride: int = 1,
) -> WindowBatch:
    """Slice trajectories into training pairs.

    transformer mode pairs the columns [z_i .. z_{i+T-1}] with
    [z_{i+shift} .. z_{i+shift+T-1}] (default shift = T, matching rollouts
    that advance T steps per network call). feedforward mode yields
    single-step (z_i, z_{i+1}) pairs.
    """
    if mode not in ("transformer", "feedforward"):
        raise ValueError(f"unknown window mode {mode!r}")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    ins, outs = [], []
    for traj in trajectories:
        states = traj.trajectory.states if isinstance(traj, TrajectoryRecord) else traj.states
        if mode == "feedforward":
            if states.shape[0] < 2:
                raise TrajectoryTooShortError("feedforward pairs need at least two points")
            ins.append(states[:-1][::stride])
            outs.append(states[1:][::stride])
        else:
            eff_shift = seq_len if shift is None else shift
            for win_in, win_out in _windows_from_states(states, seq_len, eff_shift, stride):
                ins.append(win_in[None])
                outs.append(win_out[None])
    if mode == "feedforward":
        inputs = np.concatenate(ins) if ins else np.zeros((0, 3))
        outputs = np.concatenate(outs) if outs else np.zeros((0, 3))
        return WindowBatch(inputs, outputs, mode, 1, 1)
    eff_shift = seq_len if shift is None else shift
    inputs = np.concatenate(ins) if ins else np.zeros((0, 3, seq_len))
    outputs = np.concatenate(outs) if outs else np.zeros((0, 3, seq_len))
    return WindowBatch(inputs, outputs, mode, seq_len, eff_shift)


# ---------------------------------------------------------------------------
# Trajectory file I/O
# ---------------------------------------------------------------------------

TRAJECTORY_HEADER = "t,z1,z2,z3"
MANIFEST_NAME = "manifest.csv"


def _fmt(x: float) -> str:
    # 17 significant digits: exact f64 round-trip
    return format(float(x), ".17g")


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_trajectory_csv(path, traj: Trajectory) -> None:
    lines = [TRAJECTORY_HEADER]
    for t, z in zip(traj.times, traj.states):
        lines.append(",".join([_fmt(t), _fmt(z[0]), _fmt(z[1]), _fmt(z[2])]))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    rows = Path(path).read_text().strip().split("\n")
    if rows[0] != TRAJECTORY_HEADER:
        raise ValueError(f"{path}: unexpected trajectory header {rows[0]!r}")
    data = np.array([[float(x) for x in row.split(",")] for row in rows[1:]])
    return Trajectory(data[:, 0], data[:, 1:4])


def write_dataset(out_dir, records: list[TrajectoryRecord]) -> Path:
    """Write one CSV per trajectory plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_lines = ["index,family,v,file"]
    for i, rec in enumerate(records):
        name = f"traj_{i:04d}_{rec.family}.csv"
        write_trajectory_csv(out_dir / name, rec.trajectory)
        manifest_lines.append(f"{i},{rec.family},{_fmt(rec.v)},{name}")
    manifest = out_dir / MANIFEST_NAME
    atomic_write_text(manifest, "\n".join(manifest_lines) + "\n")
    return manifest


def load_dataset(data_dir) -> list[TrajectoryRecord]:
    data_dir = Path(data_dir)
    manifest = data_dir / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {data_dir}")
    records = []
    for line in manifest.read_text().strip().split("\n")[1:]:
        _, family, v, name = line.split(",")
        records.append(TrajectoryRecord(family, float(v), read_trajectory_csv(data_dir / name)))
    return records
