"""Loss, Adam with exponentially decaying learning rate, and the epoch loop.

Training is deterministic given (seed, config, dataset): shuffling uses the
package's splitmix64 stream with a per-epoch derived seed, updates act on
the packed parameter representations (so structural constraints survive
optimization exactly), and no parallel reductions are involved.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff
from .dynamics import WindowBatch
from .errors import EmptyDatasetError, NonFiniteGradientError, ZeroTargetError
from .layers import ModelSpec, forward_tape
from .params import ParamStore
from .precision import resolve_dtype
from .rng import derive_seed, permutation


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; defaults follow the experiment settings."""

    eta1: float = 1e-2
    eta2: float = 1e-6
    rho1: float = 0.9
    rho2: float = 0.99
    delta: float = 1e-8
    n_epochs: int = 500_000
    batch_size: int = 128
    seed: int = 0
    precision: str = "f32"

    def __post_init__(self):
        if not (0 < self.eta2 <= self.eta1):
            raise ValueError("need 0 < eta2 <= eta1")
        if not (0 <= self.rho1 < 1 and 0 <= self.rho2 < 1):
            raise ValueError("moment decays must lie in [0, 1)")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.n_epochs < 0:
            raise ValueError("n_epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        resolve_dtype(self.precision)

    def as_dict(self) -> dict:
        return asdict(self)


# Desk-scale preset: small enough to run the full three-model comparison in
# well under an hour on one CPU while keeping the qualitative ordering of
# the losses and a tight rollout invariant band for the volume-preserving
# transformer. Windows are strided to the rollout advancement (3 steps).
DESK_SCALE = {
    "grid_step": 0.1,
    "n_epochs": 20_000,
    "batch_size": 128,
    "window_stride": 3,
}


@dataclass
class RunRecord:
    """Per-epoch loss history plus enough metadata to reproduce the run."""

    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    final_checksum: str = ""
    config: dict = field(default_factory=dict)

    def history_rows(self):
        for epoch, (loss, lr, sec) in enumerate(zip(self.losses, self.lrs, self.seconds)):
            yield epoch, loss, lr, sec


def relative_l2_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """||target - pred||_2 / ||target||_2 with the Frobenius norm for matrices."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, target {target.shape}")
    denom = float(np.sqrt((target.astype(np.float64) ** 2).sum()))
    if denom == 0.0:
        raise ZeroTargetError("relative loss undefined: target has zero norm")
    num = float(np.sqrt(((target.astype(np.float64) - pred.astype(np.float64)) ** 2).sum()))
    return num / denom


def lr_schedule(cfg: TrainConfig, t: int) -> float:
    """Geometric decay: eta(0) = eta1, eta(n_epochs) = eta2."""
    if cfg.n_epochs == 0:
        return cfg.eta1
    base = np.exp(np.log(cfg.eta2 / cfg.eta1) / cfg.n_epochs)
    return float(base**t * cfg.eta1)


class AdamState:
    """First/second moment accumulators, held flat across all groups.

    The update math is elementwise, so operating on one concatenated vector
    is bit-identical to per-group updates while avoiding the call overhead
    of many tiny array operations.
    """

    def __init__(self, store: ParamStore, rho1: float, rho2: float, delta: float):
        self.rho1 = rho1
        self.rho2 = rho2
        self.delta = delta
        self.step_count = 0
        self.slices = []
        lo = 0
        for g in store:
            self.slices.append((g.name, lo, lo + g.size, g.data.shape))
            lo += g.size
        dtype = store.dtype
        self.m = np.zeros(lo, dtype=dtype)
        self.v = np.zeros(lo, dtype=dtype)

    def moments_for(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        for group_name, lo, hi, shape in self.slices:
            if group_name == name:
                return self.m[lo:hi].reshape(shape), self.v[lo:hi].reshape(shape)
        raise KeyError(name)


def adam_step(store: ParamStore, state: AdamState, grads: dict, lr: float) -> None:
    """Standard bias-corrected Adam update applied to the packed groups.

    Groups missing from grads are left untouched (their gradient is zero,
    and zero gradients leave zero moments unchanged at init).
    """
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.rho1**t
    c2 = 1.0 - state.rho2**t
    flat_grad = np.concatenate(
        [
            np.ascontiguousarray(
                grads.get(name, np.zeros((hi - lo,), dtype=state.m.dtype))
            ).reshape(-1)
            for name, lo, hi, _ in state.slices
        ]
    )
    state.m *= state.rho1
    state.m += (1.0 - state.rho1) * flat_grad
    state.v *= state.rho2
    state.v += (1.0 - state.rho2) * flat_grad * flat_grad
    update = lr * (state.m / c1) / (np.sqrt(state.v / c2) + state.delta)
    for name, lo, hi, shape in state.slices:
        store[name].data -= update[lo:hi].reshape(shape)


def _lift_batch(batch: WindowBatch, dtype) -> tuple[np.ndarray, np.ndarray]:
    inputs = np.asarray(batch.inputs, dtype=dtype)
    outputs = np.asarray(batch.outputs, dtype=dtype)
    if batch.mode == "feedforward":
        inputs = inputs[:, :, None]
        outputs = outputs[:, :, None]
    return inputs, outputs


def batch_loss_node(tape, spec: ModelSpec, store: ParamStore, inputs, targets, target_norms):
    """Mean over the batch of per-sample relative L2 losses, as a tape node."""
    out, leaves, _ = forward_tape(tape, spec, store, inputs)
    diff = autodiff.sub(out, tape.constant(targets))
    ratio = autodiff.divide(autodiff.frob_norm(diff), tape.constant(target_norms))
    return autodiff.mean_all(ratio), leaves


def mean_relative_loss(spec: ModelSpec, store: ParamStore, batch: WindowBatch) -> float:
    """Numpy-only evaluation of the training objective (no tape)."""
    from .layers import forward_numpy

    inputs, targets = _lift_batch(batch, store.dtype)
    out = forward_numpy(spec, store, inputs)
    norms = np.sqrt((targets.astype(np.float64) ** 2).sum(axis=(-2, -1)))
    diffs = np.sqrt(((targets.astype(np.float64) - out.astype(np.float64)) ** 2).sum(axis=(-2, -1)))
    if np.any(norms == 0.0):
        raise ZeroTargetError("window set contains a zero-norm target")
    return float((diffs / norms).mean())


def train(
    spec: ModelSpec,
    store: ParamStore,
    batch: WindowBatch,
    cfg: TrainConfig,
    checkpoint_every: int = 0,
    checkpoint_fn=None,
) -> RunRecord:
    """Run the epoch loop, mutating store in place; returns the loss history.

    One epoch is a full pass over all windows in shuffled order. The epoch
    loss is the exact mean of per-window relative losses seen that epoch.
    """
    dtype = resolve_dtype(cfg.precision)
    if store.dtype != dtype:
        raise ValueError(f"store dtype {store.dtype} does not match config precision {cfg.precision}")
    inputs, targets = _lift_batch(batch, dtype)
    n = inputs.shape[0]
    if n == 0:
        raise EmptyDatasetError("no training windows")
    target_norms = np.sqrt(
        (targets.astype(np.float64) ** 2).sum(axis=(-2, -1), keepdims=True)
    )
    if np.any(target_norms == 0.0):
        raise ZeroTargetError("window set contains a zero-norm target")
    target_norms = target_norms.astype(dtype)

    record = RunRecord(config=cfg.as_dict())
    adam = AdamState(store, cfg.rho1, cfg.rho2, cfg.delta)
    for epoch in range(cfg.n_epochs):
        started = time.perf_counter()
        order = permutation(n, derive_seed(cfg.seed, "shuffle", epoch))
        lr = lr_schedule(cfg, epoch)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            tape = autodiff.Tape()
            loss, leaves = batch_loss_node(
                tape, spec, store, inputs[idx], targets[idx], target_norms[idx]
            )
            autodiff.backward(loss)
            grads = {}
            for name, leaf in leaves.items():
                grad = leaf.grad
                if grad is None:
                    grad = np.zeros_like(leaf.value)
                if not np.isfinite(grad).all():
                    raise NonFiniteGradientError(
                        f"non-finite gradient in group {name!r} at epoch {epoch}"
                    )
                grads[name] = grad
            adam_step(store, adam, grads, lr)
            total += loss.value.item() * len(idx)
        record.losses.append(total / n)
        record.lrs.append(lr)
        record.seconds.append(time.perf_counter() - started)
        if checkpoint_every and checkpoint_fn and (epoch + 1) % checkpoint_every == 0:
            checkpoint_fn(epoch, store, record)
    record.final_checksum = store.checksum()
    return record
