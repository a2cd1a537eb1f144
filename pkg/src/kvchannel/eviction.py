"""Token-eviction baselines and their composition with channel pruning.

Two lightweight policies cover the temporal axis: an attention-score
window-and-pool eviction (SnapKV-style) and a sinks-plus-recent sliding
window (StreamingLLM-style). Channel pruning stacks on top: evict whole
tokens first, then prune channels of the survivors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import AttentionState, build_state
from .numerics import as_matrix


@dataclass(frozen=True)
class EvictionPolicy:
    kind: str  # "none" | "snapkv" | "streaming"
    budget: int = 0
    kernel: int = 7
    sinks: int = 4
    recent: int = 64

    def __post_init__(self):
        if self.kind not in ("none", "snapkv", "streaming"):
            raise ValueError(f"unknown eviction policy {self.kind!r}")
        if self.kind == "snapkv":
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ValueError(f"pooling kernel must be odd and >= 1, got {self.kernel}")
        if self.kind == "streaming" and (self.sinks < 0 or self.recent < 0):
            raise ValueError("sinks and recent must be nonnegative")


def _max_pool_centered(scores: np.ndarray, kernel: int) -> np.ndarray:
    """Width-``kernel`` centered max pool, neighborhoods clipped at the ends."""
    if kernel == 1:
        return scores.copy()
    half = kernel // 2
    pooled = scores.copy()
    n = len(scores)
    for shift in range(1, half + 1):
        pooled[shift:] = np.maximum(pooled[shift:], scores[: n - shift])
        pooled[: n - shift] = np.maximum(pooled[: n - shift], scores[shift:])
    return pooled


def snapkv_lite(q_window, K, budget: int, kernel: int = 7) -> np.ndarray:
    """Keep the observation window plus the highest-scoring prefix tokens.

    Token scores are the window queries' softmax attention weights summed
    over the window, max-pooled over a centered neighborhood. Ties break
    toward the lower token index. Returns ascending kept indices.
    """
    Q = as_matrix(q_window, "query window").astype(np.float64)
    keys = as_matrix(K, "keys").astype(np.float64)
    S, D = keys.shape
    W = Q.shape[0]
    if budget < W:
        raise ValueError(f"budget {budget} smaller than window {W}")
    if budget > S:
        raise ValueError(f"budget {budget} exceeds sequence length {S}")
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"pooling kernel must be odd and >= 1, got {kernel}")
    logits = (Q @ keys.T) / math.sqrt(D)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    weights = e / e.sum(axis=1, keepdims=True)
    scores = weights.sum(axis=0)
    pooled = _max_pool_centered(scores, kernel)
    prefix = S - W
    n_keep = min(budget - W, prefix)
    order = np.argsort(-pooled[:prefix], kind="stable")  # ties -> lower index
    kept = np.concatenate([order[:n_keep], np.arange(prefix, S)])
    kept.sort()
    return kept.astype(np.int64)


def streaming_lite(S: int, sinks: int, recent: int) -> np.ndarray:
    """Keep the first ``sinks`` and last ``recent`` token indices (set union,
    so an overlapping window is counted once). Returns ascending indices."""
    if S < 1:
        raise ValueError("sequence must contain at least one token")
    if sinks < 0 or recent < 0:
        raise ValueError("sinks and recent must be nonnegative")
    head = np.arange(min(sinks, S))
    tail = np.arange(max(S - recent, 0), S)
    return np.union1d(head, tail).astype(np.int64)


def evict(policy: EvictionPolicy, q_window, K) -> np.ndarray:
    """Kept token indices under ``policy`` (all tokens for kind "none")."""
    S = as_matrix(K, "keys").shape[0]
    if policy.kind == "none":
        return np.arange(S, dtype=np.int64)
    if policy.kind == "snapkv":
        return snapkv_lite(q_window, K, policy.budget, policy.kernel)
    return streaming_lite(S, policy.sinks, policy.recent)


def compose(q_window, K, V, kept_indices, **build_kwargs) -> AttentionState:
    """Gather surviving rows, then run the channel-pruning prefill on them.

    Saliency, masks, statistics, and packed caches are computed over the
    survivors only.
    """
    keys = as_matrix(K, "keys")
    vals = as_matrix(V, "values")
    kept = np.asarray(kept_indices, dtype=np.int64)
    if kept.ndim != 1 or len(kept) == 0:
        raise ValueError("kept set must be a nonempty index vector")
    if np.any(np.diff(kept) <= 0):
        raise ValueError("kept indices must be strictly ascending")
    if kept[0] < 0 or kept[-1] >= keys.shape[0]:
        raise ValueError("kept indices out of range")
    return build_state(q_window, keys[kept], vals[kept], **build_kwargs)
