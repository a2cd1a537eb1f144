"""Experiment description and result-row schema."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from ..eviction import EvictionPolicy
from ..recovery import RecoveryDistribution
from ..saliency import SelectionStrategy, retained_count

_STRATEGIES = ("fixed", "top_p", "grouped")
_DISTS = ("normal", "exponential", "degenerate")
_EVICTIONS = ("none", "snapkv", "streaming")
_ACCOUNTING = ("values_only", "with_overhead")


@dataclass
class ExperimentConfig:
    """Full description of one run; everything downstream derives from it.

    Single sequence, single layer: the method is per-head independent, so
    batching and extra layers would only scale the arithmetic.
    """

    seq_len: int = 256
    head_dim: int = 64
    heads: int = 1
    window: int = 32
    decode_steps: int = 16
    lambda_k: float = 0.5
    lambda_v: float = 0.0
    strategy: str = "fixed"
    top_p: float = 0.99
    groups: int = 4
    group_ratios: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    dist: str = "degenerate"
    eviction: str = "none"
    kv_budget: int = 0  # 0 means the full sequence (eviction is a no-op)
    pool_kernel: int = 7
    sinks: int = 4
    recent: int = 64
    accounting: str = "values_only"
    elem_bytes: int = 2
    index_bytes: int = 1
    epsilon: float = 1e-6
    seed: int = 0
    # not CLI-exposed: synthetic-data and recovery variants used by tests
    channel_heterogeneity: bool = True
    signed_division: bool = False
    reprune_tail: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.seq_len < 1 or self.head_dim < 1 or self.heads < 1:
            raise ValueError("seq_len, head_dim, and heads must be positive")
        if not 1 <= self.window <= self.seq_len:
            raise ValueError(f"window must lie in [1, seq_len], got {self.window}")
        if self.decode_steps < 0:
            raise ValueError("decode_steps must be nonnegative")
        if not 0.0 <= self.lambda_k < 1.0 or not 0.0 <= self.lambda_v < 1.0:
            raise ValueError("pruning ratios must lie in [0, 1)")
        if retained_count(self.lambda_k, self.head_dim) < 1:
            raise ValueError(f"lambda_k={self.lambda_k} retains no key channel")
        if self.lambda_v > 0.0 and retained_count(self.lambda_v, self.head_dim) < 1:
            raise ValueError(f"lambda_v={self.lambda_v} retains no value channel")
        if self.strategy not in _STRATEGIES:
            raise ValueError(f"strategy must be one of {_STRATEGIES}, got {self.strategy!r}")
        if self.dist not in _DISTS:
            raise ValueError(f"dist must be one of {_DISTS}, got {self.dist!r}")
        if self.eviction not in _EVICTIONS:
            raise ValueError(f"eviction must be one of {_EVICTIONS}, got {self.eviction!r}")
        if self.accounting not in _ACCOUNTING:
            raise ValueError(f"accounting must be one of {_ACCOUNTING}, got {self.accounting!r}")
        if self.eviction == "snapkv":
            budget = self.effective_budget()
            if not self.window <= budget <= self.seq_len:
                raise ValueError(f"kv_budget must lie in [window, seq_len], got {budget}")
        if self.elem_bytes < 1 or self.index_bytes < 1:
            raise ValueError("byte widths must be >= 1")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        # strategy/policy constructors run their own range checks
        self.selection_strategy()
        self.eviction_policy()
        self.recovery_distribution()
        return self

    def effective_budget(self) -> int:
        return self.kv_budget if self.kv_budget > 0 else self.seq_len

    def selection_strategy(self) -> SelectionStrategy:
        if self.strategy == "fixed":
            return SelectionStrategy.fixed(self.lambda_k)
        if self.strategy == "top_p":
            return SelectionStrategy.top_p(self.top_p)
        return SelectionStrategy.grouped(self.groups, self.group_ratios)

    def recovery_distribution(self) -> RecoveryDistribution:
        return RecoveryDistribution.parse(self.dist)

    def eviction_policy(self) -> EvictionPolicy:
        return EvictionPolicy(
            kind=self.eviction,
            budget=self.effective_budget(),
            kernel=self.pool_kernel,
            sinks=self.sinks,
            recent=self.recent,
        )

    def replace(self, **updates) -> "ExperimentConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(updates)
        return ExperimentConfig(**data)


# echoed config columns, then metrics; wall_time_ms is deliberately not a
# CSV column so that identical (config, seed) runs emit identical bytes
CSV_COLUMNS = (
    "seq_len",
    "head_dim",
    "heads",
    "window",
    "decode_steps",
    "lambda_k",
    "lambda_v",
    "strategy",
    "top_p",
    "groups",
    "group_ratios",
    "dist",
    "eviction",
    "kv_budget",
    "pool_kernel",
    "sinks",
    "recent",
    "accounting",
    "elem_bytes",
    "index_bytes",
    "epsilon",
    "seed",
    "attn_logit_frobenius_error",
    "output_mse",
    "output_max_abs",
    "kv_bytes_full",
    "kv_bytes_compressed",
    "reduction_fraction",
    "achieved_overall_ratio",
)


@dataclass
class ExperimentRow:
    """Config echo plus the metrics of one run."""

    config: ExperimentConfig
    attn_logit_frobenius_error: float
    output_mse: float
    output_max_abs: float
    kv_bytes_full: int
    kv_bytes_compressed: int
    reduction_fraction: float
    achieved_overall_ratio: float
    wall_time_ms: float = 0.0

    def csv_fields(self) -> list[str]:
        c = self.config
        return [
            _fmt(getattr(c, name)) if hasattr(c, name) else _fmt(getattr(self, name))
            for name in CSV_COLUMNS
        ]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, tuple):
        return "|".join(f"{v:.6g}" for v in value)
    return str(value)
