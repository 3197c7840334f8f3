"""Named, typed parameter groups with packed structured storage.

Structured weights (strictly triangular, skew-symmetric) are stored packed,
never dense, so their constraints hold exactly through any number of
optimizer updates. Group shapes by kind:

- dense: (d, d) weight matrix
- bias:  (d, 1) column vector
- lower/upper/skew: (d*(d-1)/2,) packed free entries
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import linalg

GROUP_KINDS = ("dense", "bias", "lower", "upper", "skew")


def group_size(kind: str, dim: int) -> int:
    if kind == "dense":
        return dim * dim
    if kind == "bias":
        return dim
    if kind in ("lower", "upper", "skew"):
        return linalg.n_strict_entries(dim)
    raise ValueError(f"unknown parameter kind {kind!r}")


def group_shape(kind: str, dim: int) -> tuple[int, ...]:
    if kind == "dense":
        return (dim, dim)
    if kind == "bias":
        return (dim, 1)
    return (linalg.n_strict_entries(dim),)


@dataclass
class ParamGroup:
    name: str
    kind: str
    dim: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in GROUP_KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        expected = group_shape(self.kind, self.dim)
        self.data = np.asarray(self.data)
        if self.data.shape != expected:
            raise ValueError(
                f"group {self.name!r} ({self.kind}, dim {self.dim}): "
                f"expected shape {expected}, got {self.data.shape}"
            )

    @property
    def size(self) -> int:
        return self.data.size

    def materialized(self) -> np.ndarray:
        """Dense matrix (or bias column) for inspection and numpy forwards."""
        if self.kind == "lower":
            return linalg.materialize_strict_lower(self.data, self.dim)
        if self.kind == "upper":
            return linalg.materialize_strict_upper(self.data, self.dim)
        if self.kind == "skew":
            return linalg.materialize_skew(self.data, self.dim)
        return self.data


class ParamStore:
    """Ordered collection of named parameter groups."""

    def __init__(self, groups):
        self.groups = list(groups)
        self._by_name = {}
        for g in self.groups:
            if g.name in self._by_name:
                raise ValueError(f"duplicate parameter group {g.name!r}")
            self._by_name[g.name] = g

    def __iter__(self):
        return iter(self.groups)

    def __len__(self):
        return len(self.groups)

    def __getitem__(self, name: str) -> ParamGroup:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def names(self) -> list[str]:
        return [g.name for g in self.groups]

    @property
    def n_params(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def dtype(self) -> np.dtype:
        return self.groups[0].data.dtype if self.groups else np.dtype(np.float64)

    def flatten(self) -> np.ndarray:
        """All parameters as one vector, group order then C order within a group."""
        if not self.groups:
            return np.zeros(0)
        return np.concatenate([g.data.reshape(-1) for g in self.groups])

    def unflatten(self, vec: np.ndarray) -> "ParamStore":
        """New store with the same structure and data taken from vec."""
        vec = np.asarray(vec)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected vector of length {self.n_params}, got shape {vec.shape}")
        out = []
        lo = 0
        for g in self.groups:
            chunk = vec[lo : lo + g.size].reshape(g.data.shape).copy()
            out.append(ParamGroup(g.name, g.kind, g.dim, chunk))
            lo += g.size
        return ParamStore(out)

    def copy(self) -> "ParamStore":
        return ParamStore(ParamGroup(g.name, g.kind, g.dim, g.data.copy()) for g in self.groups)

    def astype(self, dtype) -> "ParamStore":
        return ParamStore(
            ParamGroup(g.name, g.kind, g.dim, g.data.astype(dtype)) for g in self.groups
        )

    def checksum(self) -> str:
        """SHA-256 over the raw parameter bytes (dtype-tagged)."""
        h = hashlib.sha256()
        h.update(str(self.dtype).encode())
        for g in self.groups:
            h.update(g.name.encode())
            h.update(np.ascontiguousarray(g.data).tobytes())
        return h.hexdigest()
