"""Finite-difference verification of the reverse-mode gradients.

The check compares tape gradients of the training objective against central
differences taken through the numpy-only forward path, per scalar parameter,
in double precision. Relative error is measured against max(1, |g|) so that
round-off on near-zero gradients does not read as failure while any real
defect on an O(1) gradient does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .dynamics import WindowBatch
from .layers import ModelSpec
from .params import ParamStore
from .training import batch_loss_node, mean_relative_loss, _lift_batch

DEFAULT_FD_STEP = 1e-5


@dataclass(frozen=True)
class GroupCheck:
    name: str
    max_abs_diff: float
    max_rel_diff: float


@dataclass(frozen=True)
class GradReport:
    """Worst AD-vs-FD disagreement per parameter group."""

    groups: tuple[GroupCheck, ...]
    step: float

    @property
    def max_abs_diff(self) -> float:
        return max((g.max_abs_diff for g in self.groups), default=0.0)

    @property
    def max_rel_diff(self) -> float:
        return max((g.max_rel_diff for g in self.groups), default=0.0)

    def worst_group(self) -> str | None:
        if not self.groups:
            return None
        return max(self.groups, key=lambda g: g.max_rel_diff).name


def ad_gradients(spec: ModelSpec, store: ParamStore, batch: WindowBatch) -> tuple[float, dict]:
    """Loss value and tape gradients of the mean relative loss."""
    inputs, targets = _lift_batch(batch, store.dtype)
    norms = np.sqrt((targets.astype(np.float64) ** 2).sum(axis=(-2, -1), keepdims=True))
    tape = autodiff.Tape()
    loss, leaves = batch_loss_node(tape, spec, store, inputs, targets, norms.astype(store.dtype))
    autodiff.backward(loss)
    grads = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for name, leaf in leaves.items()
    }
    return float(loss.value), grads


def grad_check(
    spec: ModelSpec,
    store: ParamStore,
    batch: WindowBatch,
    step: float = DEFAULT_FD_STEP,
) -> GradReport:
    """Central-difference check of every scalar parameter (double precision)."""
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    if len(store) == 0:
        return GradReport(groups=(), step=step)
    work = store.astype(np.float64)
    _, grads = ad_gradients(spec, work, batch)
    checks = []
    for group in work:
        ad = grads[group.name]
        fd = np.zeros_like(group.data)
        flat = group.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = mean_relative_loss(spec, work, batch)
            flat[i] = orig - step
            down = mean_relative_loss(spec, work, batch)
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * step)
        diff = np.abs(ad - fd)
        denom = np.maximum(1.0, np.maximum(np.abs(ad), np.abs(fd)))
        checks.append(
            GroupCheck(
                name=group.name,
                max_abs_diff=float(diff.max(initial=0.0)),
                max_rel_diff=float((diff / denom).max(initial=0.0)),
            )
        )
    return GradReport(groups=tuple(checks), step=step)


def random_window_batch(spec: ModelSpec, n: int, seed: int, scale: float = 1.0) -> WindowBatch:
    """Seeded synthetic windows for gradient and volume checks."""
    from .rng import SplitMix64, derive_seed

    stream = SplitMix64(derive_seed(seed, "gradcheck-batch"))
    if spec.kind == "vpff":
        shape = (n, spec.d)
        mode = "feedforward"
        seq_len = 1
    else:
        shape = (n, spec.d, spec.seq_len)
        mode = "transformer"
        seq_len = spec.seq_len
    size = int(np.prod(shape))
    inputs = stream.uniforms(size, -scale, scale).reshape(shape)
    outputs = stream.uniforms(size, -scale, scale).reshape(shape)
    return WindowBatch(inputs, outputs, mode, seq_len, seq_len)
