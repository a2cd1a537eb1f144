"""Decode-time reconstruction of pruned key channels.

For every pruned position (t, j) a plausible saliency score is drawn from
the statistics cached at prefill, then back-computed into a key entry as
``score / max(|q̄[j]|, eps)`` so the realized product with the mean query
reproduces the drawn score. Retained positions pass through bit-exact.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import kernels
from .kvstore import PrunedKeyCache, RecoveryStats
from .numerics import Prng, as_vector, sample_exponential, sample_normal


class RecoveryDistribution(str, Enum):
    NORMAL = "normal"           # N(mu, sigma^2), clamped below at 0
    EXPONENTIAL = "exponential"  # mean mu; falls back to degenerate if mu <= 0
    DEGENERATE = "degenerate"   # point mass at mu_pruned

    @classmethod
    def parse(cls, name: str) -> "RecoveryDistribution":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown recovery distribution {name!r}") from None


def sample_score(
    dist: RecoveryDistribution, stats: RecoveryStats, t: int, prng: Prng | None
) -> float:
    """One nonnegative saliency draw for token ``t``."""
    if dist is RecoveryDistribution.DEGENERATE:
        return float(stats.mu_pruned[t])
    if prng is None:
        raise ValueError(f"{dist.value} recovery requires a generator")
    if dist is RecoveryDistribution.NORMAL:
        # negative draws have no key-entry interpretation; clamp at 0
        return max(0.0, sample_normal(prng, float(stats.mu[t]), float(stats.sigma[t])))
    mu = float(stats.mu[t])
    if mu <= 0.0:
        return float(stats.mu_pruned[t])
    return sample_exponential(prng, mu)


def clamped_denominator(q_bar, epsilon: float, signed: bool = False) -> np.ndarray:
    """Per-channel divisor for back-computation: |q̄| floored at ``epsilon``.

    With ``signed=True`` the divisor keeps the sign of q̄ (magnitude still
    floored), so recovered entries flip sign on negative query channels.
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    q = as_vector(q_bar, "mean query").astype(np.float64)
    mag = np.maximum(np.abs(q), epsilon)
    if signed:
        mag = np.where(q < 0.0, -mag, mag)
    return mag.astype(np.float32)


def recover_keys(
    cache: PrunedKeyCache,
    stats: RecoveryStats,
    q_bar,
    dist: RecoveryDistribution,
    prng: Prng | None = None,
    epsilon: float = 1e-6,
    signed_division: bool = False,
) -> np.ndarray:
    """Reconstruct the full S x D key matrix from the packed cache.

    Retained positions carry the exact cached values; each pruned position
    draws its own score (row-major order over pruned positions, so a replay
    of the generator stream reproduces the fills).
    """
    if len(stats) != cache.origin_len:
        raise ValueError("stats and cache describe different token counts")
    denom = clamped_denominator(q_bar, epsilon, signed_division)
    if len(denom) != cache.head_dim:
        raise ValueError("mean query length differs from cache head_dim")
    if dist is RecoveryDistribution.DEGENERATE:
        return kernels.fill_rowconst(
            cache.offsets, cache.indices, cache.values, cache.head_dim,
            stats.mu_pruned, denom,
        )
    S, D = cache.origin_len, cache.head_dim
    pruned_per_row = D - cache.kept_counts
    samples = np.empty(int(pruned_per_row.sum()), dtype=np.float32)
    k = 0
    for t in range(S):
        for _ in range(int(pruned_per_row[t])):
            samples[k] = sample_score(dist, stats, t, prng)
            k += 1
    return kernels.fill_flat(
        cache.offsets, cache.indices, cache.values, D, samples, denom
    )


def zero_fill_keys(cache: PrunedKeyCache) -> np.ndarray:
    """Ablation reconstruction: pruned positions stay zero."""
    return cache.to_dense()
