"""The three architectures: volume-preserving feedforward (vpff),
volume-preserving transformer (vpt), and standard transformer (st).

A model is a ModelSpec (architecture description) plus a ParamStore
(named parameter groups). Forward evaluation runs either directly on
numpy arrays or on an autodiff tape; both paths share one layer walk so
they cannot drift apart.

Sequence inputs are matrices with one state per column. The feedforward
sublayers act columnwise, so the same code serves plain state vectors
(a single column) and sequence windows.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff, linalg
from .errors import DimMismatchError
from .params import ParamGroup, ParamStore, group_shape, group_size
from .precision import resolve_dtype
from .rng import SplitMix64, derive_seed

MODEL_KINDS = ("vpff", "vpt", "st")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    seq_len records the training window width T; it is not an architecture
    parameter (the attention weight is d x d, so a fitted transformer
    accepts any window width without re-parameterization).
    """

    kind: str
    d: int = 3
    n_blocks: int = 2
    n_linear: int = 1
    n_units: int = 1
    seq_len: int = 3

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.n_blocks < 0 or self.n_linear < 0:
            raise ValueError("n_blocks and n_linear must be non-negative")
        if self.kind in ("vpt", "st") and self.n_units < 1:
            raise ValueError("transformers need at least one unit")
        if self.seq_len < 1:
            raise ValueError("seq_len must be positive")

    @property
    def is_transformer(self) -> bool:
        return self.kind in ("vpt", "st")


def default_spec(kind: str, d: int = 3) -> ModelSpec:
    """The experiment-table settings for each architecture."""
    if kind == "vpff":
        return ModelSpec(kind="vpff", d=d, n_blocks=6, n_linear=1, n_units=1, seq_len=1)
    if kind == "vpt":
        return ModelSpec(kind="vpt", d=d, n_blocks=2, n_linear=1, n_units=3, seq_len=3)
    if kind == "st":
        return ModelSpec(kind="st", d=d, n_blocks=2, n_linear=1, n_units=3, seq_len=3)
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------

def _vpff_core_layout(prefix: str, spec: ModelSpec) -> list[tuple[str, str]]:
    layout = []
    for k in range(spec.n_blocks):
        for r in range(spec.n_linear):
            layout.append((f"{prefix}block{k}.linear{r}.lower", "lower"))
            layout.append((f"{prefix}block{k}.linear{r}.upper", "upper"))
        layout.append((f"{prefix}block{k}.bias", "bias"))
        layout.append((f"{prefix}block{k}.act_lower.weight", "lower"))
        layout.append((f"{prefix}block{k}.act_lower.bias", "bias"))
        layout.append((f"{prefix}block{k}.act_upper.weight", "upper"))
        layout.append((f"{prefix}block{k}.act_upper.bias", "bias"))
    layout.append((f"{prefix}final.lower", "lower"))
    layout.append((f"{prefix}final.upper", "upper"))
    layout.append((f"{prefix}final.bias", "bias"))
    return layout


def group_layout(spec: ModelSpec) -> list[tuple[str, str]]:
    """Ordered (name, kind) pairs; the order fixes init draws and flattening."""
    if spec.kind == "vpff":
        return _vpff_core_layout("", spec)
    layout = []
    for u in range(spec.n_units):
        if spec.kind == "vpt":
            layout.append((f"unit{u}.attention.skew", "skew"))
            layout.extend(_vpff_core_layout(f"unit{u}.", spec))
        else:
            layout.append((f"unit{u}.attention.weight", "dense"))
            for k in range(spec.n_blocks):
                layout.append((f"unit{u}.resnet{k}.weight", "dense"))
                layout.append((f"unit{u}.resnet{k}.bias", "bias"))
    return layout


def count_params(spec: ModelSpec) -> int:
    """Total scalar parameter count implied by the spec."""
    return sum(group_size(kind, spec.d) for _, kind in group_layout(spec))


SKEW_INIT_SCALE = 0.01


def init_params(spec: ModelSpec, seed: int = 0, precision: str | None = None) -> ParamStore:
    """Seeded initialization.

    Dense and triangular weights draw from U(-s, s) with s = 1/sqrt(d);
    biases start at zero; skew entries draw from U(-0.01, 0.01) so the
    attention starts near the identity. Draws are consumed in group order,
    making initialization a pure function of (spec, seed).
    """
    dtype = resolve_dtype(precision)
    stream = SplitMix64(derive_seed(seed, "init"))
    s = 1.0 / np.sqrt(spec.d)
    groups = []
    for name, kind in group_layout(spec):
        shape = group_shape(kind, spec.d)
        if kind == "bias":
            data = np.zeros(shape, dtype=np.float64)
        elif kind == "skew":
            data = stream.uniforms(group_size(kind, spec.d), -SKEW_INIT_SCALE, SKEW_INIT_SCALE)
        else:
            data = stream.uniforms(group_size(kind, spec.d), -s, s).reshape(shape)
        groups.append(ParamGroup(name, kind, spec.d, data.reshape(shape).astype(dtype)))
    return ParamStore(groups)


# ---------------------------------------------------------------------------
# Forward engine (numpy backend and tape backend share the layer walk)
# ---------------------------------------------------------------------------

class _NumpyOps:
    """Raw-array backend; value computations are shared with the tape ops so
    both forward paths are bit-identical."""

    matmul = staticmethod(np.matmul)
    add = staticmethod(np.add)
    linear_residual = staticmethod(autodiff._linear_residual_value)

    @staticmethod
    def affine_tanh_residual(w, x, b):
        return autodiff._affine_tanh_residual_value(w, x, b)[0]

    @staticmethod
    def attention(a, z, kind):
        return autodiff._attention_value(a, z, kind)[0]

    @staticmethod
    def shape_of(a):
        return a.shape

    @staticmethod
    def windows_to_columns(a):
        if a.ndim == 2:
            return a
        n, d, t = a.shape
        return a.transpose(1, 0, 2).reshape(d, n * t)

    @staticmethod
    def columns_to_windows(a, batch_shape):
        if len(batch_shape) == 2:
            return a
        n, d, t = batch_shape
        return a.reshape(d, n, t).transpose(1, 0, 2)


class _TapeOps:
    matmul = staticmethod(autodiff.matmul)
    add = staticmethod(autodiff.add)
    linear_residual = staticmethod(autodiff.linear_residual)
    affine_tanh_residual = staticmethod(autodiff.affine_tanh_residual)
    attention = staticmethod(autodiff.attention)
    windows_to_columns = staticmethod(autodiff.windows_to_columns)
    columns_to_windows = staticmethod(autodiff.columns_to_windows)

    @staticmethod
    def shape_of(a):
        return a.value.shape


def _np_param_values(store: ParamStore) -> dict:
    return {g.name: g.materialized() for g in store}


def _tape_param_values(tape, store: ParamStore) -> tuple[dict, dict]:
    leaves = {}
    values = {}
    for g in store:
        leaf = tape.leaf(g.data)
        leaves[g.name] = leaf
        if g.kind == "lower":
            values[g.name] = autodiff.materialize_strict_lower(leaf, g.dim)
        elif g.kind == "upper":
            values[g.name] = autodiff.materialize_strict_upper(leaf, g.dim)
        elif g.kind == "skew":
            values[g.name] = autodiff.materialize_skew(leaf, g.dim)
        else:
            values[g.name] = leaf
    return values, leaves


def _apply_vp_attention(a_dense, z, ops):
    return ops.attention(a_dense, z, "cayley")


def _apply_standard_attention(a_dense, z, ops):
    return ops.attention(a_dense, z, "softmax")


def _apply_vpff_core(values, prefix, x, ops, spec):
    for k in range(spec.n_blocks):
        for r in range(spec.n_linear):
            x = ops.linear_residual(values[f"{prefix}block{k}.linear{r}.lower"], x)
            x = ops.linear_residual(values[f"{prefix}block{k}.linear{r}.upper"], x)
        x = ops.add(x, values[f"{prefix}block{k}.bias"])
        x = ops.affine_tanh_residual(
            values[f"{prefix}block{k}.act_lower.weight"], x, values[f"{prefix}block{k}.act_lower.bias"]
        )
        x = ops.affine_tanh_residual(
            values[f"{prefix}block{k}.act_upper.weight"], x, values[f"{prefix}block{k}.act_upper.bias"]
        )
    x = ops.linear_residual(values[f"{prefix}final.lower"], x)
    x = ops.linear_residual(values[f"{prefix}final.upper"], x)
    x = ops.add(x, values[f"{prefix}final.bias"])
    return x


def _apply_st_feedforward(values, prefix, x, ops, spec):
    # plain ResNet layers with add connection; the last one has linear activation
    for k in range(spec.n_blocks):
        if k < spec.n_blocks - 1:
            x = ops.affine_tanh_residual(
                values[f"{prefix}resnet{k}.weight"], x, values[f"{prefix}resnet{k}.bias"]
            )
        else:
            pre = ops.add(
                ops.matmul(values[f"{prefix}resnet{k}.weight"], x),
                values[f"{prefix}resnet{k}.bias"],
            )
            x = ops.add(x, pre)
    return x


def _apply_model(values, z, ops, spec):
    # the feedforward sublayers act columnwise, so they run in the flattened
    # (d, N*T) layout where every weight application is one matmul
    shape = ops.shape_of(z)
    if spec.kind == "vpff":
        cols = ops.windows_to_columns(z)
        cols = _apply_vpff_core(values, "", cols, ops, spec)
        return ops.columns_to_windows(cols, shape)
    for u in range(spec.n_units):
        # no add connection around attention, for either transformer flavor
        if spec.kind == "vpt":
            z = _apply_vp_attention(values[f"unit{u}.attention.skew"], z, ops)
            cols = ops.windows_to_columns(z)
            cols = _apply_vpff_core(values, f"unit{u}.", cols, ops, spec)
        else:
            z = _apply_standard_attention(values[f"unit{u}.attention.weight"], z, ops)
            cols = ops.windows_to_columns(z)
            cols = _apply_st_feedforward(values, f"unit{u}.", cols, ops, spec)
        z = ops.columns_to_windows(cols, shape)
    return z


def _check_input(spec: ModelSpec, z: np.ndarray) -> None:
    if z.ndim < 2 or z.shape[-2] != spec.d:
        raise DimMismatchError(
            f"{spec.kind} forward: expected (..., {spec.d}, cols) input, got shape {z.shape}"
        )


def forward_numpy(spec: ModelSpec, store: ParamStore, z: np.ndarray) -> np.ndarray:
    """Forward pass on raw arrays, returned in the input's layout.

    vpff inputs: a state vector (d,), a batch of state rows (N, d), or
    stacked columns (N, d, 1). Transformer inputs: one window (d, T) or a
    stack of windows (N, d, T).
    """
    z = np.asarray(z)
    if spec.kind == "vpff" and z.ndim == 1:
        out = forward_numpy(spec, store, z[None, :])
        return out[0]
    if spec.kind == "vpff" and z.ndim == 2:
        # rows are samples
        if z.shape[1] != spec.d:
            raise DimMismatchError(f"vpff forward: expected (N, {spec.d}) states, got {z.shape}")
        return _apply_model(_np_param_values(store), z[:, :, None], _NumpyOps, spec)[:, :, 0]
    _check_input(spec, z)
    return _apply_model(_np_param_values(store), z, _NumpyOps, spec)


def forward_tape(tape, spec: ModelSpec, store: ParamStore, z: np.ndarray,
                 input_requires_grad: bool = False, params_require_grad: bool = True):
    """Forward pass recorded on a tape.

    Returns (output node, parameter leaves by name, input leaf). The input
    must already be in (..., d, cols) layout.
    """
    z = np.asarray(z)
    _check_input(spec, z)
    ops = _TapeOps
    if params_require_grad:
        values, leaves = _tape_param_values(tape, store)
    else:
        values = {g.name: tape.constant(g.materialized()) for g in store}
        leaves = {}
    z_leaf = tape.leaf(z, requires_grad=input_requires_grad)
    out = _apply_model(values, z_leaf, ops, spec)
    return out, leaves, z_leaf


# ---------------------------------------------------------------------------
# Standalone attention entry points
# ---------------------------------------------------------------------------

def vp_attention(weight: linalg.SkewSymParam, z: np.ndarray) -> np.ndarray:
    """Volume-preserving attention: Z -> Z * Cayley(Z^T A Z).

    The correlation Z^T A Z is skew-symmetric for any Z because A is, so the
    Cayley input is always valid and the reweighting matrix is orthogonal.
    """
    z = np.asarray(z)
    if z.ndim < 2 or z.shape[-2] != weight.dim:
        raise DimMismatchError(f"vp_attention: expected (..., {weight.dim}, T) input, got {z.shape}")
    dense = linalg.materialize(weight).astype(z.dtype)
    return _apply_vp_attention(dense, z, _NumpyOps)


def standard_attention(weight: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Softmax attention: Z -> Z * softmax_col(Z^T A Z); columns of the
    reweighting matrix are probability vectors, so each output column is a
    convex combination of input columns."""
    weight = np.asarray(weight)
    z = np.asarray(z)
    if weight.ndim != 2 or weight.shape[0] != weight.shape[1]:
        raise DimMismatchError(f"standard_attention: weight must be square, got {weight.shape}")
    if z.ndim < 2 or z.shape[-2] != weight.shape[0]:
        raise DimMismatchError(
            f"standard_attention: expected (..., {weight.shape[0]}, T) input, got {z.shape}"
        )
    return _apply_standard_attention(weight.astype(z.dtype), z, _NumpyOps)


def with_seq_len(spec: ModelSpec, seq_len: int) -> ModelSpec:
    return replace(spec, seq_len=seq_len)
