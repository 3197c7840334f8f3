"""Dense real linear algebra kernels.

Matrices are numpy arrays whose trailing two axes hold (rows, cols) in
row-major order; any leading axes are a stack (batch). Inverses of matrices
up to 5x5 are computed from the closed-form adjugate/determinant formulas
(vectorized over the stack); larger matrices fall back to LU with partial
pivoting. The Cayley transform and the packed structured parameters
(strictly triangular, skew-symmetric) used by the volume-preserving layers
live here as well.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatchError, SingularMatrixError

# A matrix counts as singular when |det| (or an LU pivot) falls at or below
# this fraction of its largest absolute entry.
SINGULARITY_RTOL = 1e-12

EXPLICIT_INVERSE_MAX_DIM = 5


def _square_dim(m: np.ndarray, op: str) -> int:
    m = np.asarray(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimMismatchError(f"{op}: expected square matrices, got shape {m.shape}")
    return m.shape[-1]


def _max_abs(m: np.ndarray) -> np.ndarray:
    """Largest absolute entry per stacked matrix, shape (...)."""
    return np.abs(m).max(axis=(-2, -1))


def _leibniz_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    signs = np.empty(len(perms), dtype=np.float64)
    for k, p in enumerate(perms):
        # parity via explicit inversion count; n <= 5 keeps this cheap
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if p[i] > p[j])
        signs[k] = -1.0 if inv % 2 else 1.0
    return perms, signs


_LEIBNIZ: dict[int, tuple[np.ndarray, np.ndarray]] = {n: _leibniz_tables(n) for n in range(1, 6)}


def _det_leibniz(m: np.ndarray) -> np.ndarray:
    """Determinant by cofactor/permanent-style expansion, stacked. dim <= 5."""
    n = m.shape[-1]
    perms, signs = _LEIBNIZ[n]
    rows = np.arange(n)
    # gather (..., n!, n) entries m[..., i, perm[i]] and reduce
    terms = m[..., rows, perms].prod(axis=-1)
    return (terms * signs.astype(m.dtype)).sum(axis=-1)


def explicit_det(m: np.ndarray) -> np.ndarray:
    """Closed-form determinant for dims 1..5; returns shape (...)."""
    n = _square_dim(m, "explicit_det")
    if n > EXPLICIT_INVERSE_MAX_DIM:
        raise DimMismatchError(f"explicit_det supports dim <= 5, got {n}")
    if n == 1:
        return m[..., 0, 0]
    if n == 2:
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if n == 3:
        a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
        d, e, f = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
        g, h, i = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
        return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    return _det_leibniz(m)


def _adjugate(m: np.ndarray) -> np.ndarray:
    """Adjugate (transposed cofactor matrix), stacked, for dims 1..5."""
    n = m.shape[-1]
    if n == 1:
        return np.ones_like(m)
    if n == 2:
        adj = np.empty_like(m)
        adj[..., 0, 0] = m[..., 1, 1]
        adj[..., 0, 1] = -m[..., 0, 1]
        adj[..., 1, 0] = -m[..., 1, 0]
        adj[..., 1, 1] = m[..., 0, 0]
        return adj
    if n == 3:
        a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
        d, e, f = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
        g, h, i = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
        adj = np.empty_like(m)
        adj[..., 0, 0] = e * i - f * h
        adj[..., 0, 1] = c * h - b * i
        adj[..., 0, 2] = b * f - c * e
        adj[..., 1, 0] = f * g - d * i
        adj[..., 1, 1] = a * i - c * g
        adj[..., 1, 2] = c * d - a * f
        adj[..., 2, 0] = d * h - e * g
        adj[..., 2, 1] = b * g - a * h
        adj[..., 2, 2] = a * e - b * d
        return adj
    # dims 4 and 5: cofactors from explicit minors
    adj = np.empty_like(m)
    idx = np.arange(n)
    for i in range(n):
        rows = idx[idx != i]
        for j in range(n):
            cols = idx[idx != j]
            minor = m[..., rows[:, None], cols[None, :]]
            sign = -1.0 if (i + j) % 2 else 1.0
            adj[..., j, i] = sign * _det_leibniz(minor)
    return adj


def explicit_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse via the adjugate/determinant formula for dims 1..5.

    Raises DimMismatchError for non-square input or dim > 5, and
    SingularMatrixError when |det| <= SINGULARITY_RTOL * max|entry|.
    """
    m = np.asarray(m)
    n = _square_dim(m, "explicit_inverse")
    if n > EXPLICIT_INVERSE_MAX_DIM:
        raise DimMismatchError(
            f"explicit_inverse supports dim <= {EXPLICIT_INVERSE_MAX_DIM}, got {n}"
        )
    det = explicit_det(m)
    tol = SINGULARITY_RTOL * _max_abs(m)
    if np.any(np.abs(det) <= tol):
        raise SingularMatrixError(f"matrix of dim {n} is singular within tolerance")
    inv = _adjugate(m) / det[..., None, None]
    if not np.isfinite(inv).all():
        raise SingularMatrixError("explicit inverse produced non-finite entries")
    return inv


def lu_factor(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """LU factorization with partial pivoting of a single square matrix.

    Returns (lu, perm, n_swaps) where lu packs L (unit diagonal, below) and
    U (on and above the diagonal) and perm maps factored rows back to input
    rows. Raises SingularMatrixError when a pivot falls below the relative
    threshold.
    """
    m = np.asarray(m)
    if m.ndim != 2:
        raise DimMismatchError(f"lu_factor expects a single matrix, got shape {m.shape}")
    n = _square_dim(m, "lu_factor")
    a = m.astype(np.promote_types(m.dtype, np.float32), copy=True)
    perm = np.arange(n)
    tol = SINGULARITY_RTOL * (np.abs(m).max() if m.size else 0.0)
    swaps = 0
    for k in range(n):
        p = int(np.argmax(np.abs(a[k:, k]))) + k
        if np.abs(a[p, k]) <= tol:
            raise SingularMatrixError(f"zero pivot in column {k}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
            swaps += 1
        a[k + 1 :, k] /= a[k, k]
        a[k + 1 :, k + 1 :] -= np.outer(a[k + 1 :, k], a[k, k + 1 :])
    return a, perm, swaps


def lu_solve(lu: np.ndarray, perm: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b given lu_factor output; b may carry multiple columns."""
    n = lu.shape[0]
    x = np.asarray(b, dtype=lu.dtype)[perm].copy()
    if x.ndim == 1:
        x = x[:, None]
        squeeze = True
    else:
        squeeze = False
    for k in range(1, n):
        x[k] -= lu[k, :k] @ x[:k]
    for k in range(n - 1, -1, -1):
        x[k] -= lu[k, k + 1 :] @ x[k + 1 :]
        x[k] /= lu[k, k]
    return x[:, 0] if squeeze else x


def _lu_inverse_single(m: np.ndarray) -> np.ndarray:
    lu, perm, _ = lu_factor(m)
    inv = lu_solve(lu, perm, np.eye(m.shape[-1], dtype=lu.dtype))
    return inv.astype(m.dtype, copy=False)


def lu_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse via LU with partial pivoting; accepts stacked matrices."""
    m = np.asarray(m)
    _square_dim(m, "lu_inverse")
    if m.ndim == 2:
        out = _lu_inverse_single(m)
    else:
        flat = m.reshape((-1,) + m.shape[-2:])
        out = np.stack([_lu_inverse_single(mi) for mi in flat]).reshape(m.shape)
    if not np.isfinite(out).all():
        raise SingularMatrixError("LU inverse produced non-finite entries")
    return out


def lu_det(m: np.ndarray) -> np.ndarray:
    """Determinant via LU; accepts stacked matrices, returns shape (...)."""
    m = np.asarray(m)
    _square_dim(m, "lu_det")

    def one(mi: np.ndarray) -> float:
        try:
            lu, _, swaps = lu_factor(mi)
        except SingularMatrixError:
            return 0.0
        sign = -1.0 if swaps % 2 else 1.0
        return sign * float(np.prod(np.diag(lu)))

    if m.ndim == 2:
        return np.asarray(one(m))
    flat = m.reshape((-1,) + m.shape[-2:])
    return np.array([one(mi) for mi in flat]).reshape(m.shape[:-2])


def det(m: np.ndarray) -> np.ndarray:
    """Determinant: closed form up to 5x5, LU beyond."""
    m = np.asarray(m)
    n = _square_dim(m, "det")
    if n <= EXPLICIT_INVERSE_MAX_DIM:
        return explicit_det(m)
    return lu_det(m)


def inverse(m: np.ndarray) -> np.ndarray:
    """Inverse: adjugate formula up to 5x5, LU with partial pivoting beyond."""
    m = np.asarray(m)
    n = _square_dim(m, "inverse")
    if n <= EXPLICIT_INVERSE_MAX_DIM:
        return explicit_inverse(m)
    return lu_inverse(m)


def cayley(y: np.ndarray) -> np.ndarray:
    """Cayley transform (I - Y)(I + Y)^-1, stacked.

    For skew-symmetric Y the result is orthogonal with determinant +1, and
    I + Y is always invertible (skew spectra are purely imaginary).
    """
    y = np.asarray(y)
    n = _square_dim(y, "cayley")
    eye = np.eye(n, dtype=y.dtype)
    return np.matmul(eye - y, inverse(eye + y))


# ---------------------------------------------------------------------------
# Packed structured parameters
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def strict_lower_indices(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major indices below the diagonal: (2,1), (3,1), (3,2), ... in math terms."""
    return np.tril_indices(dim, -1)


@functools.lru_cache(maxsize=None)
def strict_upper_indices(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major indices above the diagonal; the transpose layout of the lower packing."""
    return np.triu_indices(dim, 1)


def n_strict_entries(dim: int) -> int:
    return dim * (dim - 1) // 2


def _check_entries(dim: int, entries: np.ndarray, kind: str) -> np.ndarray:
    entries = np.asarray(entries)
    if dim < 1:
        raise DimMismatchError(f"{kind}: dim must be positive, got {dim}")
    if entries.ndim != 1 or entries.shape[0] != n_strict_entries(dim):
        raise DimMismatchError(
            f"{kind}: expected {n_strict_entries(dim)} packed entries for dim {dim}, "
            f"got shape {entries.shape}"
        )
    return entries


@dataclass(frozen=True)
class StrictLowerParam:
    """Strictly lower-triangular matrix stored as its free entries, row-major."""

    dim: int
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _check_entries(self.dim, self.entries, "StrictLowerParam"))


@dataclass(frozen=True)
class StrictUpperParam:
    """Strictly upper-triangular twin of StrictLowerParam."""

    dim: int
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _check_entries(self.dim, self.entries, "StrictUpperParam"))


@dataclass(frozen=True)
class SkewSymParam:
    """Skew-symmetric matrix stored as its strict upper triangle, row-major.

    The materialized matrix is built as U - U^T, so A + A^T is exactly the
    zero matrix and the diagonal is exactly zero.
    """

    dim: int
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _check_entries(self.dim, self.entries, "SkewSymParam"))


def materialize_strict_lower(entries: np.ndarray, dim: int) -> np.ndarray:
    entries = _check_entries(dim, entries, "strict lower")
    out = np.zeros((dim, dim), dtype=entries.dtype)
    ri, ci = strict_lower_indices(dim)
    out[ri, ci] = entries
    return out


def materialize_strict_upper(entries: np.ndarray, dim: int) -> np.ndarray:
    entries = _check_entries(dim, entries, "strict upper")
    out = np.zeros((dim, dim), dtype=entries.dtype)
    ri, ci = strict_upper_indices(dim)
    out[ri, ci] = entries
    return out


def materialize_skew(entries: np.ndarray, dim: int) -> np.ndarray:
    upper = materialize_strict_upper(entries, dim)
    return upper - upper.T


def materialize(param) -> np.ndarray:
    """Dense matrix for a packed parameter; structural zeros are bit-exact."""
    if isinstance(param, StrictLowerParam):
        return materialize_strict_lower(param.entries, param.dim)
    if isinstance(param, StrictUpperParam):
        return materialize_strict_upper(param.entries, param.dim)
    if isinstance(param, SkewSymParam):
        return materialize_skew(param.entries, param.dim)
    raise TypeError(f"cannot materialize {type(param).__name__}")


def is_well_conditioned_seed(m: np.ndarray, floor: float = 1e-3) -> bool:
    """Cheap rejection test used when drawing random nonsingular matrices."""
    n = m.shape[-1]
    scale = max(float(_max_abs(m)), 1.0)
    return bool(abs(float(det(m))) > floor * scale**n)
