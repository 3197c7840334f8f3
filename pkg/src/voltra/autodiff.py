"""Reverse-mode automatic differentiation over stacked matrices.

A Tape records an append-only list of nodes in topological order; each node
caches its forward value (a numpy array whose trailing two axes are the
matrix) and a backward rule. Leading axes broadcast as a batch. Tapes are
single-use per forward pass and are not thread-safe; build one tape per
evaluation.

Matrix inverse differentiates through the exact rule
d(M^-1) = -M^-1 dM M^-1, which is what carries gradients through the
Cayley transform. Softmax is stabilized by subtracting the column max
before exponentiation, which leaves its value unchanged.
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .errors import NonScalarRootError, ShapeMismatchError


class Node:
    __slots__ = ("tape", "value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, tape, value, requires_grad, parents=(), vjp=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Append-only op graph; nodes appear in valid topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value, requires_grad: bool = True) -> Node:
        node = Node(self, np.asarray(value), requires_grad)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self.leaf(value, requires_grad=False)


def _record(tape: Tape, value, parents, vjp) -> Node:
    requires = any(p.requires_grad for p in parents)
    node = Node(tape, value, requires, parents if requires else (), vjp if requires else None)
    tape.nodes.append(node)
    return node


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted cotangent back to the parent's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _require_matrix(node: Node, op: str) -> None:
    if node.value.ndim < 2:
        raise ShapeMismatchError(f"{op}: operand must have at least 2 axes, got {node.value.shape}")


def _elementwise_value(a: Node, b: Node, ufunc, op: str) -> np.ndarray:
    try:
        return ufunc(a.value, b.value)
    except ValueError as exc:
        raise ShapeMismatchError(f"{op}: cannot broadcast {a.value.shape} with {b.value.shape}") from exc


def add(a: Node, b: Node) -> Node:
    value = _elementwise_value(a, b, np.add, "add")
    na, nb = a.requires_grad, b.requires_grad
    ash, bsh = a.value.shape, b.value.shape

    def vjp(g):
        return (
            _unbroadcast(g, ash) if na else None,
            _unbroadcast(g, bsh) if nb else None,
        )

    return _record(a.tape, value, (a, b), vjp)


def sub(a: Node, b: Node) -> Node:
    value = _elementwise_value(a, b, np.subtract, "sub")
    na, nb = a.requires_grad, b.requires_grad
    ash, bsh = a.value.shape, b.value.shape

    def vjp(g):
        return (
            _unbroadcast(g, ash) if na else None,
            _unbroadcast(-g, bsh) if nb else None,
        )

    return _record(a.tape, value, (a, b), vjp)


def matmul(a: Node, b: Node) -> Node:
    _require_matrix(a, "matmul")
    _require_matrix(b, "matmul")
    if a.value.shape[-1] != b.value.shape[-2]:
        raise ShapeMismatchError(f"matmul: inner dims differ, {a.value.shape} @ {b.value.shape}")
    try:
        value = np.matmul(a.value, b.value)
    except ValueError as exc:
        raise ShapeMismatchError(f"matmul: batch axes incompatible, {a.value.shape} @ {b.value.shape}") from exc
    na, nb = a.requires_grad, b.requires_grad
    av, bv = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, bv.swapaxes(-1, -2)), av.shape) if na else None
        gb = _unbroadcast(np.matmul(av.swapaxes(-1, -2), g), bv.shape) if nb else None
        return ga, gb

    return _record(a.tape, value, (a, b), vjp)


def transpose(a: Node) -> Node:
    _require_matrix(a, "transpose")
    value = a.value.swapaxes(-1, -2)

    def vjp(g):
        return (g.swapaxes(-1, -2),)

    return _record(a.tape, value, (a,), vjp)


def scale(a: Node, factor: float) -> Node:
    value = a.value * factor

    def vjp(g):
        return (g * factor,)

    return _record(a.tape, value, (a,), vjp)


def tanh_elementwise(a: Node) -> Node:
    value = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - value * value),)

    return _record(a.tape, value, (a,), vjp)


def _softmax_cols_value(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-2, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-2, keepdims=True)


def softmax_columnwise(a: Node) -> Node:
    """Softmax down each column (normalizes along the rows axis)."""
    _require_matrix(a, "softmax_columnwise")
    value = _softmax_cols_value(a.value)

    def vjp(g):
        inner = (g * value).sum(axis=-2, keepdims=True)
        return (value * (g - inner),)

    return _record(a.tape, value, (a,), vjp)


def mat_inverse(a: Node) -> Node:
    """Matrix inverse; adjugate formulas up to 5x5, LU beyond."""
    _require_matrix(a, "mat_inverse")
    value = linalg.inverse(a.value)
    vt = value.swapaxes(-1, -2)

    def vjp(g):
        return (-np.matmul(vt, np.matmul(g, vt)),)

    return _record(a.tape, value, (a,), vjp)


def concat_cols(nodes) -> Node:
    nodes = list(nodes)
    if not nodes:
        raise ShapeMismatchError("concat_cols: need at least one operand")
    for n in nodes:
        _require_matrix(n, "concat_cols")
    value = np.concatenate([n.value for n in nodes], axis=-1)
    widths = [n.value.shape[-1] for n in nodes]
    needs = [n.requires_grad for n in nodes]

    def vjp(g):
        outs = []
        lo = 0
        for w, need in zip(widths, needs):
            outs.append(g[..., lo : lo + w] if need else None)
            lo += w
        return tuple(outs)

    return _record(nodes[0].tape, value, tuple(nodes), vjp)


def slice_cols(a: Node, start: int, stop: int) -> Node:
    _require_matrix(a, "slice_cols")
    if not (0 <= start <= stop <= a.value.shape[-1]):
        raise ShapeMismatchError(
            f"slice_cols: [{start}:{stop}] out of range for width {a.value.shape[-1]}"
        )
    value = a.value[..., start:stop].copy()
    full_shape = a.value.shape

    def vjp(g):
        out = np.zeros(full_shape, dtype=g.dtype)
        out[..., start:stop] = g
        return (out,)

    return _record(a.tape, value, (a,), vjp)


def materialize_strict_lower(packed: Node, dim: int) -> Node:
    """Packed entries -> dense strictly lower-triangular matrix node."""
    ri, ci = linalg.strict_lower_indices(dim)
    value = np.zeros((dim, dim), dtype=packed.value.dtype)
    value[ri, ci] = packed.value

    def vjp(g):
        return (g[ri, ci],)

    return _record(packed.tape, value, (packed,), vjp)


def materialize_strict_upper(packed: Node, dim: int) -> Node:
    ri, ci = linalg.strict_upper_indices(dim)
    value = np.zeros((dim, dim), dtype=packed.value.dtype)
    value[ri, ci] = packed.value

    def vjp(g):
        return (g[ri, ci],)

    return _record(packed.tape, value, (packed,), vjp)


def materialize_skew(packed: Node, dim: int) -> Node:
    """Packed strict upper triangle -> dense skew-symmetric matrix node.

    The dense cotangent projects back onto the packing as
    g_packed[ij] = g_dense[ij] - g_dense[ji], so packed parameters stay
    exactly skew under any gradient update.
    """
    ri, ci = linalg.strict_upper_indices(dim)
    upper = np.zeros((dim, dim), dtype=packed.value.dtype)
    upper[ri, ci] = packed.value
    value = upper - upper.T

    def vjp(g):
        return (g[ri, ci] - g[ci, ri],)

    return _record(packed.tape, value, (packed,), vjp)


def windows_to_columns(a: Node) -> Node:
    """(N, d, T) stack -> (d, N*T) matrix whose columns are all states.

    Columnwise sublayers (triangular residual maps, ResNet layers) then run
    as single BLAS matmuls instead of stacked small ones. A 2-d input passes
    through unchanged. Inverse: columns_to_windows.
    """
    v = a.value
    if v.ndim == 2:
        value = v.copy()

        def vjp(g):
            return (g,)

    else:
        n, d, t = v.shape
        value = v.transpose(1, 0, 2).reshape(d, n * t)

        def vjp(g):
            return (g.reshape(d, n, t).transpose(1, 0, 2),)

    return _record(a.tape, value, (a,), vjp)


def columns_to_windows(a: Node, batch_shape: tuple) -> Node:
    """Inverse of windows_to_columns for the given original shape."""
    v = a.value
    if len(batch_shape) == 2:
        if v.shape != batch_shape:
            raise ShapeMismatchError(f"columns_to_windows: {v.shape} vs {batch_shape}")
        value = v.copy()

        def vjp(g):
            return (g,)

    else:
        n, d, t = batch_shape
        if v.shape != (d, n * t):
            raise ShapeMismatchError(f"columns_to_windows: {v.shape} cannot become {batch_shape}")
        value = v.reshape(d, n, t).transpose(1, 0, 2)

        def vjp(g):
            return (g.transpose(1, 0, 2).reshape(d, n * t),)

    return _record(a.tape, value, (a,), vjp)


def frob_norm(a: Node) -> Node:
    """Per-matrix Frobenius norm over the trailing two axes, keepdims."""
    _require_matrix(a, "frob_norm")
    value = np.sqrt((a.value * a.value).sum(axis=(-2, -1), keepdims=True))
    av = a.value

    def vjp(g):
        denom = np.where(value > 0, value, 1.0)
        return (g * av / denom,)

    return _record(a.tape, value, (a,), vjp)


def divide(a: Node, b: Node) -> Node:
    value = _elementwise_value(a, b, np.divide, "divide")
    na, nb = a.requires_grad, b.requires_grad
    av, bv = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(g / bv, av.shape) if na else None
        gb = _unbroadcast(-g * av / (bv * bv), bv.shape) if nb else None
        return ga, gb

    return _record(a.tape, value, (a, b), vjp)


def mean_all(a: Node) -> Node:
    """Mean over every element; yields a 1x1 node suitable as a backward root."""
    value = np.full((1, 1), a.value.mean(), dtype=a.value.dtype)
    size = a.value.size
    shape = a.value.shape

    def vjp(g):
        return (np.full(shape, g.flat[0] / size, dtype=g.dtype),)

    return _record(a.tape, value, (a,), vjp)


# ---------------------------------------------------------------------------
# Fused layer ops
#
# These compose the primitive rules above into single nodes for the training
# hot path. The value computations are shared with the numpy-only forward
# (see _*_value), so both execution paths produce bit-identical outputs, and
# every backward rule here is checked against central differences in the
# test suite.
# ---------------------------------------------------------------------------

def _linear_residual_value(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x + np.matmul(w, x)


def _affine_tanh_residual_value(w, x, b):
    t = np.tanh(np.matmul(w, x) + b)
    return x + t, t


def _attention_value(a: np.ndarray, z: np.ndarray, kind: str):
    """Shared forward for both attention flavors.

    Returns (out, m, reweight, inv) with m = A Z, reweight the matrix applied
    from the right, and inv the Cayley resolvent (None for softmax).
    """
    m = np.matmul(a, z)
    corr = np.matmul(z.swapaxes(-1, -2), m)
    if kind == "cayley":
        eye = np.eye(corr.shape[-1], dtype=corr.dtype)
        inv = linalg.inverse(eye + corr)
        reweight = np.matmul(eye - corr, inv)
    else:
        inv = None
        reweight = _softmax_cols_value(corr)
    return np.matmul(z, reweight), m, reweight, inv


def linear_residual(w: Node, x: Node) -> Node:
    """x -> x + W x as one node."""
    value = _linear_residual_value(w.value, x.value)
    wv, xv = w.value, x.value
    nw, nx = w.requires_grad, x.requires_grad

    def vjp(g):
        gw = _unbroadcast(np.matmul(g, xv.swapaxes(-1, -2)), wv.shape) if nw else None
        gx = g + np.matmul(wv.swapaxes(-1, -2), g) if nx else None
        return gw, gx

    return _record(w.tape, value, (w, x), vjp)


def affine_tanh_residual(w: Node, x: Node, b: Node) -> Node:
    """x -> x + tanh(W x + b) as one node."""
    value, t = _affine_tanh_residual_value(w.value, x.value, b.value)
    wv, xv = w.value, x.value
    nw, nx, nb = w.requires_grad, x.requires_grad, b.requires_grad

    def vjp(g):
        u = g * (1.0 - t * t)
        gw = _unbroadcast(np.matmul(u, xv.swapaxes(-1, -2)), wv.shape) if nw else None
        gx = g + np.matmul(wv.swapaxes(-1, -2), u) if nx else None
        gb = _unbroadcast(u, b.value.shape) if nb else None
        return gw, gx, gb

    return _record(w.tape, value, (w, x, b), vjp)


def attention(a: Node, z: Node, kind: str) -> Node:
    """Z -> Z * reweight(Z^T A Z) as one node.

    kind 'cayley' applies (I - C)(I + C)^-1 to the correlation matrix C,
    kind 'softmax' the columnwise softmax.
    """
    if kind not in ("cayley", "softmax"):
        raise ValueError(f"unknown attention kind {kind!r}")
    value, m, reweight, inv = _attention_value(a.value, z.value, kind)
    av, zv = a.value, z.value
    na, nz = a.requires_grad, z.requires_grad

    def vjp(g):
        zt = zv.swapaxes(-1, -2)
        g_rw = np.matmul(zt, g)
        if kind == "cayley":
            # reweight R = (I - C) P with P = (I + C)^-1:
            # dR = -(I + R) dC P, so gC = -(g_rw + R^T g_rw) P^T
            gc = -np.matmul(g_rw + np.matmul(reweight.swapaxes(-1, -2), g_rw), inv.swapaxes(-1, -2))
        else:
            inner = (g_rw * reweight).sum(axis=-2, keepdims=True)
            gc = reweight * (g_rw - inner)
        ga = None
        if na:
            ga = _unbroadcast(np.matmul(zv, np.matmul(gc, zt)), av.shape)
        gz = None
        if nz:
            gz = (
                np.matmul(g, reweight.swapaxes(-1, -2))
                + np.matmul(m, gc.swapaxes(-1, -2))
                + np.matmul(av.swapaxes(-1, -2), np.matmul(zv, gc))
            )
        return ga, gz

    return _record(a.tape, value, (a, z), vjp)


def backward(root: Node, seed: np.ndarray | None = None) -> None:
    """Accumulate adjoints into every reachable node of root's tape.

    With no seed the root must be 1x1 (a scalar loss); an explicit seed
    enables Jacobian assembly by backpropagating unit cotangents.
    """
    if seed is None:
        if root.value.size != 1:
            raise NonScalarRootError(f"backward root has shape {root.value.shape}, expected 1x1")
        seed = np.ones_like(root.value)
    else:
        seed = np.asarray(seed, dtype=root.value.dtype)
        if seed.shape != root.value.shape:
            raise ShapeMismatchError(
                f"backward seed shape {seed.shape} does not match root {root.value.shape}"
            )
    for node in root.tape.nodes:
        node.grad = None
    root.grad = seed
    for node in reversed(root.tape.nodes):
        if node.grad is None or node._vjp is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def jacobian(out: Node, leaf: Node) -> np.ndarray:
    """Dense Jacobian d(vec out)/d(vec leaf), rows indexed in row-major order.

    Row-major flattening of a (d, T) matrix is exactly the product-space
    vectorization (z_1^(1), z_1^(2), ..., z_d^(T)) used for volume checks.
    """
    m = out.value.size
    n = leaf.value.size
    jac = np.zeros((m, n), dtype=out.value.dtype)
    for k in range(m):
        seed = np.zeros_like(out.value)
        seed.flat[k] = 1.0
        backward(out, seed)
        if leaf.grad is not None:
            jac[k] = leaf.grad.reshape(-1)
    return jac
