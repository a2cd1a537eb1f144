"""Channel-axis KV-cache compression with query-aware statistical recovery.

Per-token saliency scoring selects which key/value channels each cached
token keeps; pruned channels are reconstructed at decode time from three
cached statistics per token, so attention retains its full dimensional
structure. Token-eviction baselines, a memory-accounting model, and a
decode-loop experiment CLI sit on top.
"""

from .attention import (
    AttentionState,
    attention_compressed,
    attention_full,
    attention_zero_filled,
    build_state,
    decode_step,
    output_error,
)
from .eviction import EvictionPolicy, compose, evict, snapkv_lite, streaming_lite
from .kernels import active_backend, available_backends, set_backend
from .kvstore import (
    MemoryReport,
    PrunedKeyCache,
    PrunedValueCache,
    RecoveryStats,
    compute_stats,
    memory_report,
    prune_keys,
    prune_values,
)
from .numerics import (
    Prng,
    frobenius,
    sample_exponential,
    sample_normal,
    softmax_row,
)
from .recovery import RecoveryDistribution, recover_keys, sample_score, zero_fill_keys
from .saliency import (
    ChannelMask,
    SaliencyMatrix,
    SelectionStrategy,
    coefficient_of_variation,
    error_exact,
    error_expansion,
    mean_cv,
    mean_query,
    saliency,
    select,
    select_fixed,
    select_grouped,
    select_top_p,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionState",
    "ChannelMask",
    "EvictionPolicy",
    "MemoryReport",
    "Prng",
    "PrunedKeyCache",
    "PrunedValueCache",
    "RecoveryDistribution",
    "RecoveryStats",
    "SaliencyMatrix",
    "SelectionStrategy",
    "active_backend",
    "attention_compressed",
    "attention_full",
    "attention_zero_filled",
    "available_backends",
    "build_state",
    "coefficient_of_variation",
    "compose",
    "compute_stats",
    "decode_step",
    "error_exact",
    "error_expansion",
    "evict",
    "frobenius",
    "mean_cv",
    "mean_query",
    "memory_report",
    "output_error",
    "prune_keys",
    "prune_values",
    "recover_keys",
    "saliency",
    "sample_exponential",
    "sample_normal",
    "sample_score",
    "select",
    "select_fixed",
    "select_grouped",
    "select_top_p",
    "set_backend",
    "snapkv_lite",
    "softmax_row",
    "streaming_lite",
    "zero_fill_keys",
]
