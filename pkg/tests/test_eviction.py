import math

import numpy as np
import pytest

from kvchannel.eviction import (
    EvictionPolicy,
    compose,
    evict,
    snapkv_lite,
    streaming_lite,
)
from kvchannel.attention import build_state
from kvchannel.kvstore import memory_report
from kvchannel.numerics import Prng
from kvchannel.saliency import SelectionStrategy


def snapkv_oracle(Q, K, budget, kernel):
    """Independent reimplementation: explicit softmax rows, explicit pooling,
    explicit (score, index) sort."""
    Q = Q.astype(np.float64)
    K = K.astype(np.float64)
    S, D = K.shape
    W = Q.shape[0]
    scores = np.zeros(S)
    for w in range(W):
        logits = np.array([Q[w] @ K[t] / math.sqrt(D) for t in range(S)])
        e = np.exp(logits - logits.max())
        scores += e / e.sum()
    half = kernel // 2
    pooled = np.array(
        [max(scores[max(0, t - half) : min(S, t + half + 1)]) for t in range(S)]
    )
    prefix = S - W
    ranked = sorted(range(prefix), key=lambda t: (-pooled[t], t))
    kept = sorted(ranked[: min(budget - W, prefix)] + list(range(prefix, S)))
    return np.array(kept)


def make_qk(seed, S=24, D=8, W=4):
    prng = Prng(seed)
    return prng.normal_matrix(W, D), prng.normal_matrix(S, D), prng.normal_matrix(S, D)


class TestSnapkvLite:
    def test_full_budget_keeps_everything(self):
        Q, K, _ = make_qk(1)
        np.testing.assert_array_equal(snapkv_lite(Q, K, budget=24, kernel=7), np.arange(24))

    def test_kernel_one_is_identity_pooling(self):
        Q, K, _ = make_qk(2)
        got = snapkv_lite(Q, K, budget=10, kernel=1)
        want = snapkv_oracle(Q, K, 10, 1)
        np.testing.assert_array_equal(got, want)

    def test_matches_oracle_with_pooling(self):
        for seed in range(10):
            Q, K, _ = make_qk(100 + seed, S=40, D=8, W=8)
            got = snapkv_lite(Q, K, budget=20, kernel=7)
            np.testing.assert_array_equal(got, snapkv_oracle(Q, K, 20, 7))

    def test_uniform_keys_keep_lowest_prefix_indices(self):
        Q = Prng(3).normal_matrix(4, 8)
        K = np.ones((16, 8), np.float32)
        kept = snapkv_lite(Q, K, budget=8, kernel=3)
        np.testing.assert_array_equal(kept, [0, 1, 2, 3, 12, 13, 14, 15])

    def test_budget_below_window_rejected(self):
        Q, K, _ = make_qk(4)
        with pytest.raises(ValueError):
            snapkv_lite(Q, K, budget=3, kernel=7)

    def test_budget_above_sequence_rejected(self):
        Q, K, _ = make_qk(4)
        with pytest.raises(ValueError):
            snapkv_lite(Q, K, budget=25, kernel=7)

    def test_even_kernel_rejected(self):
        Q, K, _ = make_qk(4)
        with pytest.raises(ValueError):
            snapkv_lite(Q, K, budget=10, kernel=4)

    def test_kept_sets_ascending_unique_contain_window(self):
        for seed in range(10):
            Q, K, _ = make_qk(200 + seed, S=32, W=8)
            kept = snapkv_lite(Q, K, budget=16, kernel=7)
            assert np.all(np.diff(kept) > 0)
            assert set(range(24, 32)) <= set(kept.tolist())
            assert len(kept) == 16


class TestStreamingLite:
    def test_whole_sequence(self):
        np.testing.assert_array_equal(streaming_lite(10, 0, 10), np.arange(10))

    def test_sinks_and_recent(self):
        np.testing.assert_array_equal(streaming_lite(10, 2, 3), [0, 1, 7, 8, 9])

    def test_overlap_counted_once(self):
        for S in (5, 8, 13):
            for sinks in range(S + 1):
                for recent in range(S + 1):
                    kept = streaming_lite(S, sinks, recent)
                    overlap = max(0, min(sinks, S) + min(recent, S) - S)
                    assert len(kept) == min(sinks, S) + min(recent, S) - overlap
                    assert np.all(np.diff(kept) > 0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            streaming_lite(10, -1, 2)


class TestCompose:
    def test_noop_eviction_zero_ratio_is_vanilla(self):
        Q, K, V = make_qk(5)
        state = compose(
            Q, K, V, np.arange(24), strategy=SelectionStrategy.fixed(0.0), window=4
        )
        np.testing.assert_array_equal(state.key_cache.to_dense(), K[:20])
        np.testing.assert_array_equal(np.stack(state.tail_k), K[20:])

    def test_noop_eviction_equals_pure_channel_pruning(self):
        Q, K, V = make_qk(6)
        via_compose = compose(
            Q, K, V, np.arange(24), strategy=SelectionStrategy.fixed(0.5), window=4
        )
        direct = build_state(Q, K, V, strategy=SelectionStrategy.fixed(0.5), window=4)
        np.testing.assert_array_equal(via_compose.key_cache.indices, direct.key_cache.indices)
        np.testing.assert_array_equal(via_compose.key_cache.values, direct.key_cache.values)
        np.testing.assert_array_equal(via_compose.stats.mu, direct.stats.mu)
        np.testing.assert_array_equal(via_compose.stats.mu_pruned, direct.stats.mu_pruned)
        np.testing.assert_array_equal(via_compose.q_bar, direct.q_bar)

    def test_composition_memory_factorizes(self):
        # key bytes of the composed state equal eviction-only bytes times
        # the per-row kept-channel fraction
        Q, K, V = make_qk(7, S=32, W=8)
        kept = snapkv_lite(Q, K, budget=16, kernel=3)
        state = compose(Q, K, V, kept, strategy=SelectionStrategy.fixed(0.5), window=8)
        counts = state.kept_key_counts()
        rep = memory_report(counts, 8, elem_bytes=2, index_bytes=1, accounting="values_only")
        key_bytes = rep.compressed_bytes - 16 * 8 * 2  # minus dense V side
        eviction_only = 16 * 8 * 2
        fraction = counts.sum() / (16 * 8)
        assert key_bytes == eviction_only * fraction

    def test_empty_kept_set_rejected(self):
        Q, K, V = make_qk(8)
        with pytest.raises(ValueError):
            compose(Q, K, V, np.array([], dtype=np.int64), strategy=SelectionStrategy.fixed(0.0))

    def test_unsorted_kept_set_rejected(self):
        Q, K, V = make_qk(8)
        with pytest.raises(ValueError):
            compose(Q, K, V, np.array([3, 1]), strategy=SelectionStrategy.fixed(0.0))


class TestPolicy:
    def test_dispatch(self):
        Q, K, _ = make_qk(9, S=16, W=4)
        np.testing.assert_array_equal(
            evict(EvictionPolicy(kind="none"), Q, K), np.arange(16)
        )
        np.testing.assert_array_equal(
            evict(EvictionPolicy(kind="snapkv", budget=8, kernel=3), Q, K),
            snapkv_lite(Q, K, 8, 3),
        )
        np.testing.assert_array_equal(
            evict(EvictionPolicy(kind="streaming", sinks=2, recent=3), Q, K),
            streaming_lite(16, 2, 3),
        )

    def test_invalid_policy_rejected(self):
        with pytest.raises(ValueError):
            EvictionPolicy(kind="lru")
        with pytest.raises(ValueError):
            EvictionPolicy(kind="snapkv", budget=8, kernel=2)
