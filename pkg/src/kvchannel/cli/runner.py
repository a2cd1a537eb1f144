"""Composed pipeline execution and CSV emission.

Every run is compared against an uncompressed reference sharing the exact
same inputs and decode stream; at desk scale that comparison stands in for
benchmark accuracy. The pipeline is deterministic under (config, seed), so
repeated runs emit byte-identical CSV.
"""

from __future__ import annotations

import math
import time

import numpy as np

from ..attention import attention_full, build_state, decode_step
from ..eviction import compose, evict
from ..kvstore import memory_report
from ..numerics import Prng
from ..saliency import error_exact
from .config import CSV_COLUMNS, ExperimentConfig, ExperimentRow
from .synth import HeadTensors, generate_synthetic


def run_experiment(
    config: ExperimentConfig, heads: list[HeadTensors] | None = None
) -> ExperimentRow:
    """Run one configuration and return its metric row.

    ``heads`` overrides synthetic generation (bundle input). Memory metrics
    snapshot the cache right after prefill; output errors aggregate over
    every decode step of every head against the dense reference.
    """
    config.validate()
    started = time.perf_counter()
    if heads is None:
        heads = generate_synthetic(config)
    if len(heads) != config.heads:
        raise ValueError(f"expected {config.heads} heads, got {len(heads)}")

    policy = config.eviction_policy()
    strategy = config.selection_strategy()
    dist = config.recovery_distribution()

    logit_err_sq = 0.0
    sq_sum = 0.0
    sq_count = 0
    max_abs = 0.0
    key_counts = []
    value_counts = []
    mask_rows = 0
    mask_kept = 0

    for h, data in enumerate(heads):
        rec_prng = Prng(config.seed).derive(h, 1)
        kept = evict(policy, data.q_window, data.K)
        state = compose(
            data.q_window,
            data.K,
            data.V,
            kept,
            strategy=strategy,
            value_ratio=config.lambda_v,
            dist=dist,
            epsilon=config.epsilon,
            window=config.window,
            signed_division=config.signed_division,
            reprune_tail=config.reprune_tail,
            head_id=h,
        )
        key_counts.append(state.kept_key_counts())
        value_counts.append(state.kept_value_counts())
        if state.key_mask is not None:
            prefix = state.prefix_len
            logit_err_sq += error_exact(data.q_window, data.K[kept][:prefix], state.key_mask) ** 2
            mask_rows += prefix
            mask_kept += int(state.key_mask.kept_count.sum())

        ref_k = [data.K[i] for i in kept]
        ref_v = [data.V[i] for i in kept]
        for i in range(config.decode_steps):
            out_c, state = decode_step(
                state, data.decode_q[i], data.decode_k[i], data.decode_v[i], rec_prng
            )
            ref_k.append(data.decode_k[i])
            ref_v.append(data.decode_v[i])
            _, out_r = attention_full(data.decode_q[i], np.stack(ref_k), np.stack(ref_v))
            diff = out_c.astype(np.float64) - out_r.astype(np.float64)
            sq_sum += float(np.sum(diff * diff))
            sq_count += len(diff)
            max_abs = max(max_abs, float(np.max(np.abs(diff))))

    report = memory_report(
        np.concatenate(key_counts),
        config.head_dim,
        elem_bytes=config.elem_bytes,
        index_bytes=config.index_bytes,
        accounting=config.accounting,
        kept_value_counts=np.concatenate(value_counts) if config.lambda_v > 0.0 else None,
    )
    achieved = 1.0 - mask_kept / (mask_rows * config.head_dim) if mask_rows else 0.0

    row = ExperimentRow(
        config=config,
        attn_logit_frobenius_error=math.sqrt(logit_err_sq),
        output_mse=sq_sum / sq_count if sq_count else 0.0,
        output_max_abs=max_abs,
        kv_bytes_full=report.full_bytes,
        kv_bytes_compressed=report.compressed_total,
        reduction_fraction=report.reduction_fraction,
        achieved_overall_ratio=achieved,
        wall_time_ms=(time.perf_counter() - started) * 1000.0,
    )
    _check_finite(row)
    return row


def _check_finite(row: ExperimentRow) -> None:
    for name in (
        "attn_logit_frobenius_error",
        "output_mse",
        "output_max_abs",
        "reduction_fraction",
        "achieved_overall_ratio",
    ):
        value = getattr(row, name)
        if not math.isfinite(value):
            raise RuntimeError(f"metric {name} is non-finite ({value}); aborting")


def run_sweep(config: ExperimentConfig, lambdas) -> list[ExperimentRow]:
    """One row per key-pruning ratio, in the order given."""
    return [run_experiment(config.replace(lambda_k=lam)) for lam in lambdas]


def csv_text(rows: list[ExperimentRow]) -> str:
    """Stable-column CSV: header plus one line per row, LF endings."""
    if not rows:
        raise ValueError("no rows to emit")
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(",".join(row.csv_fields()) for row in rows)
    return "\n".join(lines) + "\n"


def emit_csv(rows: list[ExperimentRow], path) -> None:
    text = csv_text(rows)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
