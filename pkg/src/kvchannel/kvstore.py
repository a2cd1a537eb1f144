"""Packed storage for pruned KV caches, recovery statistics, and the
byte-accounting model.

Pruned caches use a ragged CSR-style layout (row offsets + ascending channel
indices + aligned values) because top-p and grouped selection produce
variable per-token cardinality; fixed-ratio rows are just the uniform
special case. Caches are built once during prefill and treated as immutable
afterwards; ``extend_packed`` returns a new cache when the optional
decode-tail re-pruning feature appends rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import as_matrix
from .saliency import ChannelMask, SaliencyMatrix, retained_count


@dataclass(frozen=True)
class PackedRows:
    """Ragged per-token storage: row t owns
    ``indices[offsets[t]:offsets[t+1]]`` (strictly ascending, < head_dim)
    and the aligned ``values`` slice."""

    head_dim: int
    offsets: np.ndarray  # (S+1,) int64
    indices: np.ndarray  # (nnz,) int32
    values: np.ndarray   # (nnz,) fp32

    def __post_init__(self):
        object.__setattr__(self, "offsets", np.ascontiguousarray(self.offsets, dtype=np.int64))
        object.__setattr__(self, "indices", np.ascontiguousarray(self.indices, dtype=np.int32))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float32))
        if self.offsets.ndim != 1 or len(self.offsets) < 1 or self.offsets[0] != 0:
            raise ValueError("offsets must be 1-D and start at 0")
        if np.any(np.diff(self.offsets) < 0) or self.offsets[-1] != len(self.indices):
            raise ValueError("offsets must be nondecreasing and end at len(indices)")
        if len(self.values) != len(self.indices):
            raise ValueError("values and indices lengths differ")
        if len(self.indices):
            if self.indices.min() < 0 or self.indices.max() >= self.head_dim:
                raise ValueError("channel indices out of range")
            # ascending within each row <=> decreasing only at row boundaries
            steps = np.diff(self.indices)
            boundary = np.zeros(len(steps), dtype=bool)
            inner = self.offsets[1:-1]
            boundary[inner[(inner > 0) & (inner < len(self.indices))] - 1] = True
            if np.any((steps <= 0) & ~boundary):
                raise ValueError("channel indices must be strictly ascending per row")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cache values must be finite")

    @property
    def origin_len(self) -> int:
        return len(self.offsets) - 1

    @property
    def kept_counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def row(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.offsets[t], self.offsets[t + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    def to_dense(self) -> np.ndarray:
        """Zero-filled dense reconstruction."""
        return kernels.scatter_rows(self.offsets, self.indices, self.values, self.head_dim)

    def to_mask(self) -> ChannelMask:
        grid = np.zeros((self.origin_len, self.head_dim), dtype=bool)
        rows = np.repeat(np.arange(self.origin_len), self.kept_counts)
        grid[rows, self.indices] = True
        return ChannelMask.from_grid(grid)

    def to_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.head_dim": np.array([self.head_dim], dtype=np.int64),
            f"{prefix}.offsets": self.offsets,
            f"{prefix}.indices": self.indices,
            f"{prefix}.values": self.values,
        }

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], prefix: str) -> "PackedRows":
        return cls(
            head_dim=int(tensors[f"{prefix}.head_dim"][0]),
            offsets=tensors[f"{prefix}.offsets"],
            indices=tensors[f"{prefix}.indices"].astype(np.int32),
            values=tensors[f"{prefix}.values"],
        )


class PrunedKeyCache(PackedRows):
    pass


class PrunedValueCache(PackedRows):
    pass


def extend_packed(cache: PackedRows, indices, values) -> PackedRows:
    """New cache with one extra row appended (decode-tail re-pruning)."""
    idx = np.ascontiguousarray(indices, dtype=np.int32)
    vals = np.ascontiguousarray(values, dtype=np.float32)
    offsets = np.concatenate([cache.offsets, [cache.offsets[-1] + len(idx)]])
    return type(cache)(
        head_dim=cache.head_dim,
        offsets=offsets,
        indices=np.concatenate([cache.indices, idx]),
        values=np.concatenate([cache.values, vals]),
    )


@dataclass(frozen=True)
class RecoveryStats:
    """Per-token saliency statistics cached for decode-time recovery:
    mean over all channels, population std over all channels, and mean over
    the pruned channels (0 when a row pruned nothing)."""

    mu: np.ndarray
    sigma: np.ndarray
    mu_pruned: np.ndarray

    def __post_init__(self):
        for name in ("mu", "sigma", "mu_pruned"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            object.__setattr__(self, name, arr)
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite 1-D array")
        if len({len(self.mu), len(self.sigma), len(self.mu_pruned)}) != 1:
            raise ValueError("stats arrays must share one length")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be nonnegative")

    def __len__(self) -> int:
        return len(self.mu)

    def extend(self, mu: float, sigma: float, mu_pruned: float) -> "RecoveryStats":
        return RecoveryStats(
            mu=np.append(self.mu, np.float32(mu)),
            sigma=np.append(self.sigma, np.float32(sigma)),
            mu_pruned=np.append(self.mu_pruned, np.float32(mu_pruned)),
        )


@dataclass(frozen=True)
class MemoryReport:
    """Byte accounting for one (or many concatenated) heads."""

    full_bytes: int
    compressed_bytes: int
    stats_bytes: int
    index_bytes: int
    reduction_fraction: float

    @property
    def compressed_total(self) -> int:
        return self.compressed_bytes + self.stats_bytes + self.index_bytes


def _pack(matrix: np.ndarray, mask: ChannelMask, cls):
    M = as_matrix(matrix, "cache source")
    if mask.shape != M.shape:
        raise ValueError("mask and matrix shapes differ")
    if np.any(mask.kept_count == 0):
        raise ValueError("every row must keep at least one channel")
    S, D = M.shape
    flat = np.flatnonzero(mask.keep.ravel())  # row-major => ascending per row
    offsets = np.zeros(S + 1, dtype=np.int64)
    np.cumsum(mask.kept_count, out=offsets[1:])
    return cls(
        head_dim=D,
        offsets=offsets,
        indices=(flat % D).astype(np.int32),
        values=M.ravel()[flat].copy(),
    )


def prune_keys(K, mask: ChannelMask) -> PrunedKeyCache:
    """Pack the retained key entries; exact values, ascending channel order."""
    return _pack(K, mask, PrunedKeyCache)


def prune_values(V, ratio: float) -> PrunedValueCache:
    """Keep the T = floor((1-ratio)*D) largest-magnitude value channels per
    token (ties to the lower index). Pruned value channels are treated as
    zero at use; no recovery step is needed on the value side."""
    M = as_matrix(V, "values")
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"value pruning ratio must lie in [0, 1), got {ratio}")
    S, D = M.shape
    T = retained_count(ratio, D)
    if T < 1:
        raise ValueError(f"ratio {ratio} with {D} channels retains no channel")
    order = np.argsort(-np.abs(M), axis=1, kind="stable")
    keep = np.zeros((S, D), dtype=bool)
    keep[np.arange(S)[:, None], order[:, :T]] = True
    return _pack(M, ChannelMask.from_grid(keep), PrunedValueCache)


def value_mask(V, ratio: float) -> ChannelMask:
    """The retention mask :func:`prune_values` applies at this ratio."""
    cache = prune_values(V, ratio)
    return cache.to_mask()


def compute_stats(W: SaliencyMatrix, mask: ChannelMask) -> RecoveryStats:
    """Token-wise saliency statistics (fp64 accumulation, fp32 storage)."""
    if mask.shape != W.shape:
        raise ValueError("mask and saliency shapes differ")
    scores = W.scores.astype(np.float64)
    D = scores.shape[1]
    mu = scores.mean(axis=1)
    sigma = scores.std(axis=1)
    pruned_count = D - mask.kept_count
    pruned_sum = scores.sum(axis=1) - np.sum(scores * mask.keep, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu_pruned = np.where(pruned_count > 0, pruned_sum / np.maximum(pruned_count, 1), 0.0)
    return RecoveryStats(mu=mu, sigma=sigma, mu_pruned=mu_pruned)


def memory_report(
    kept_key_counts,
    head_dim: int,
    *,
    elem_bytes: int,
    index_bytes: int,
    accounting: str,
    kept_value_counts=None,
) -> MemoryReport:
    """Cache footprint versus the dense baseline.

    ``kept_key_counts`` holds one retained-channel count per cached row
    (concatenate heads to account for a whole layer). The dense baseline is
    K plus V: ``2 * rows * head_dim * elem_bytes``. ``values_only`` counts
    retained payload entries; ``with_overhead`` additionally bills the
    per-entry channel indices and three fp-statistics per row.
    """
    if accounting not in ("values_only", "with_overhead"):
        raise ValueError(f"unknown accounting mode {accounting!r}")
    kk = np.asarray(kept_key_counts, dtype=np.int64)
    rows = len(kk)
    full = 2 * rows * head_dim * elem_bytes
    key_payload = int(kk.sum()) * elem_bytes
    if kept_value_counts is None:
        value_entries = rows * head_dim
        indexed_entries = int(kk.sum())
    else:
        kv = np.asarray(kept_value_counts, dtype=np.int64)
        if len(kv) != rows:
            raise ValueError("key and value row counts differ")
        value_entries = int(kv.sum())
        indexed_entries = int(kk.sum()) + value_entries
    compressed = key_payload + value_entries * elem_bytes
    if accounting == "with_overhead":
        idx = indexed_entries * index_bytes
        stats = 3 * rows * elem_bytes
    else:
        idx = 0
        stats = 0
    reduction = 1.0 - (compressed + idx + stats) / full if full else 0.0
    return MemoryReport(
        full_bytes=full,
        compressed_bytes=compressed,
        stats_bytes=stats,
        index_bytes=idx,
        reduction_fraction=reduction,
    )
