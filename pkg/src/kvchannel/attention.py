"""Full-attention reference path, the compressed recover-then-attend path,
and the sequential decode-loop state.

The compressed path materializes a dense key matrix from the packed cache at
every step (reconstruct, then standard attention) rather than fusing
recovery into the dot product: simpler and bit-reproducible. Heads are
independent single-head units; callers loop over heads with per-head
generator streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kvstore import (
    PrunedKeyCache,
    PrunedValueCache,
    RecoveryStats,
    compute_stats,
    extend_packed,
    prune_keys,
    prune_values,
)
from .numerics import Prng, as_matrix, as_vector
from .recovery import RecoveryDistribution, recover_keys, zero_fill_keys
from .saliency import ChannelMask, SelectionStrategy, mean_query, saliency, select


def attention_full(q, K, V):
    """Reference path: ``softmax(q K^T / sqrt(D))`` weights and their
    weighted sum over V. Returns ``(weights, output)``."""
    return kernels.attend(q, K, V)


def output_error(a, b) -> tuple[float, float]:
    """Mean squared difference and max absolute difference of two vectors."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {x.shape} vs {y.shape}")
    if len(x) == 0:
        return 0.0, 0.0
    d = x - y
    return float(np.mean(d * d)), float(np.max(np.abs(d)))


def _empty_cache(cls, head_dim: int):
    return cls(
        head_dim=head_dim,
        offsets=np.zeros(1, dtype=np.int64),
        indices=np.zeros(0, dtype=np.int32),
        values=np.zeros(0, dtype=np.float32),
    )


@dataclass
class AttentionState:
    """Per-head decode state: packed prefix caches plus a dense tail.

    The tail holds the observation-window rows and every decode-time
    appended row; with ``reprune_tail`` enabled, rows that age out of the
    window are pruned and migrated into the packed caches.
    """

    key_cache: PrunedKeyCache
    value_cache: PrunedValueCache
    stats: RecoveryStats
    q_bar: np.ndarray
    key_mask: ChannelMask | None
    dist: RecoveryDistribution
    epsilon: float
    signed_division: bool
    window: int
    strategy: SelectionStrategy
    value_ratio: float
    reprune_tail: bool
    tail_k: list = field(default_factory=list)
    tail_v: list = field(default_factory=list)
    _value_dense: np.ndarray | None = None

    @property
    def prefix_len(self) -> int:
        return self.key_cache.origin_len

    @property
    def token_count(self) -> int:
        return self.prefix_len + len(self.tail_k)

    @property
    def head_dim(self) -> int:
        return self.key_cache.head_dim

    def value_prefix_dense(self) -> np.ndarray:
        if self._value_dense is None:
            self._value_dense = self.value_cache.to_dense()
        return self._value_dense

    def kept_key_counts(self) -> np.ndarray:
        """Retained key channels per token, dense tail rows counting full."""
        tail = np.full(len(self.tail_k), self.head_dim, dtype=np.int64)
        return np.concatenate([self.key_cache.kept_counts, tail])

    def kept_value_counts(self) -> np.ndarray:
        tail = np.full(len(self.tail_v), self.head_dim, dtype=np.int64)
        return np.concatenate([self.value_cache.kept_counts, tail])


def build_state(
    q_window,
    K,
    V,
    *,
    strategy: SelectionStrategy,
    value_ratio: float = 0.0,
    dist: RecoveryDistribution = RecoveryDistribution.DEGENERATE,
    epsilon: float = 1e-6,
    window: int | None = None,
    signed_division: bool = False,
    reprune_tail: bool = False,
    head_id: int = 0,
) -> AttentionState:
    """Prefill pipeline: score, select, pack, and cache statistics.

    The last ``window`` rows (default: the query-window length) stay dense;
    only the preceding prefix is pruned.
    """
    Q = as_matrix(q_window, "query window")
    keys = as_matrix(K, "keys")
    vals = as_matrix(V, "values")
    if keys.shape != vals.shape:
        raise ValueError("key and value shapes differ")
    if keys.shape[1] != Q.shape[1]:
        raise ValueError("query and key head dims differ")
    S, D = keys.shape
    w = Q.shape[0] if window is None else int(window)
    if w < 0:
        raise ValueError("window must be nonnegative")
    dense = min(w, S)
    split = S - dense
    q_bar = mean_query(Q)

    if split > 0:
        scores = saliency(q_bar, keys[:split], head_id=head_id)
        mask = select(scores, strategy)
        key_cache = prune_keys(keys[:split], mask)
        stats = compute_stats(scores, mask)
        if value_ratio > 0.0:
            value_cache = prune_values(vals[:split], value_ratio)
        else:
            value_cache = _pack_full(vals[:split])
    else:
        mask = None
        key_cache = _empty_cache(PrunedKeyCache, D)
        value_cache = _empty_cache(PrunedValueCache, D)
        stats = RecoveryStats(
            mu=np.zeros(0, np.float32),
            sigma=np.zeros(0, np.float32),
            mu_pruned=np.zeros(0, np.float32),
        )

    return AttentionState(
        key_cache=key_cache,
        value_cache=value_cache,
        stats=stats,
        q_bar=q_bar,
        key_mask=mask,
        dist=dist,
        epsilon=epsilon,
        signed_division=signed_division,
        window=w,
        strategy=strategy,
        value_ratio=value_ratio,
        reprune_tail=reprune_tail,
        tail_k=[keys[t].copy() for t in range(split, S)],
        tail_v=[vals[t].copy() for t in range(split, S)],
    )


def _pack_full(M: np.ndarray) -> PrunedValueCache:
    S, D = M.shape
    return PrunedValueCache(
        head_dim=D,
        offsets=np.arange(S + 1, dtype=np.int64) * D,
        indices=np.tile(np.arange(D, dtype=np.int32), S),
        values=M.ravel().copy(),
    )


def _assemble(state: AttentionState, prng: Prng | None, zero_fill: bool):
    parts_k = []
    parts_v = []
    if state.prefix_len > 0:
        if zero_fill:
            parts_k.append(zero_fill_keys(state.key_cache))
        else:
            parts_k.append(
                recover_keys(
                    state.key_cache,
                    state.stats,
                    state.q_bar,
                    state.dist,
                    prng,
                    state.epsilon,
                    state.signed_division,
                )
            )
        parts_v.append(state.value_prefix_dense())
    if state.tail_k:
        parts_k.append(np.stack(state.tail_k))
        parts_v.append(np.stack(state.tail_v))
    if not parts_k:
        raise ValueError("state holds no tokens to attend over")
    return np.vstack(parts_k), np.vstack(parts_v)


def attention_compressed(q, state: AttentionState, prng: Prng | None = None) -> np.ndarray:
    """Recover the packed prefix, append the dense tail, attend."""
    K_all, V_all = _assemble(state, prng, zero_fill=False)
    _, out = kernels.attend(as_vector(q, "query"), K_all, V_all)
    return out


def attention_zero_filled(q, state: AttentionState) -> np.ndarray:
    """Ablation: pruned key channels contribute zero instead of recovery."""
    K_all, V_all = _assemble(state, None, zero_fill=True)
    _, out = kernels.attend(as_vector(q, "query"), K_all, V_all)
    return out


def _reprune_oldest(state: AttentionState) -> None:
    k_row = state.tail_k.pop(0)
    v_row = state.tail_v.pop(0)
    scores = saliency(state.q_bar, k_row[None, :])
    mask = select(scores, state.strategy)
    row_stats = compute_stats(scores, mask)
    idx = np.flatnonzero(mask.keep[0])
    state.key_cache = extend_packed(state.key_cache, idx, k_row[idx])
    state.stats = state.stats.extend(
        float(row_stats.mu[0]), float(row_stats.sigma[0]), float(row_stats.mu_pruned[0])
    )
    if state.value_ratio > 0.0:
        v_keep = prune_values(v_row[None, :], state.value_ratio)
        state.value_cache = extend_packed(state.value_cache, v_keep.indices, v_keep.values)
    else:
        all_idx = np.arange(state.head_dim, dtype=np.int32)
        state.value_cache = extend_packed(state.value_cache, all_idx, v_row)
    state._value_dense = None


def decode_step(
    state: AttentionState, new_q, new_k, new_v, prng: Prng | None = None
) -> tuple[np.ndarray, AttentionState]:
    """Append one token's K/V to the dense tail and attend with its query."""
    q = as_vector(new_q, "query")
    state.tail_k.append(as_vector(new_k, "key"))
    state.tail_v.append(as_vector(new_v, "value"))
    if state.reprune_tail:
        while len(state.tail_k) > state.window:
            _reprune_oldest(state)
    out = attention_compressed(q, state, prng)
    return out, state
