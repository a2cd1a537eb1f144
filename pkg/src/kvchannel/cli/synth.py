"""Seeded synthetic Q/K/V generation and head-tensor (de)serialization.

Plain i.i.d. standard-normal data makes every channel equally important, so
pruning effects vanish and bugs hide. With ``channel_heterogeneity`` on
(the default), queries and keys get per-channel log-uniform magnitude
scales in [0.1, 10] plus a shared positive mean offset, giving the skewed,
sign-consistent channel statistics that make query-aware scoring and
statistical recovery meaningful; the key side is then rescaled so logits
land in a soft-softmax regime instead of a degenerate argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..numerics import Prng
from .config import ExperimentConfig

# channel mean offset (in per-channel scale units) when heterogeneity is on;
# keeps query/key products sign-consistent so saliency tracks contribution
_CHANNEL_OFFSET = 2.0
# target standard deviation of the mean-query logits after key rescaling
_LOGIT_STD = 2.0

_FIELDS = ("q_window", "k", "v", "decode_q", "decode_k", "decode_v")


@dataclass(frozen=True)
class HeadTensors:
    """One attention head's inputs: prefill window/cache plus decode stream."""

    q_window: np.ndarray  # (W, D)
    K: np.ndarray         # (S, D)
    V: np.ndarray         # (S, D)
    decode_q: np.ndarray  # (steps, D)
    decode_k: np.ndarray  # (steps, D)
    decode_v: np.ndarray  # (steps, D)


def _log_uniform(prng: Prng, n: int, lo: float, hi: float) -> np.ndarray:
    u = prng.uniform_array(n)
    return np.exp(math.log(lo) + u * (math.log(hi) - math.log(lo))).astype(np.float32)


def _qk_matrix(prng: Prng, rows: int, scale: np.ndarray) -> np.ndarray:
    base = prng.normal_matrix(rows, len(scale))
    return ((base + _CHANNEL_OFFSET) * scale).astype(np.float32)


def _v_matrix(prng: Prng, rows: int, scale: np.ndarray) -> np.ndarray:
    return (prng.normal_matrix(rows, len(scale)) * scale).astype(np.float32)


def generate_head(config: ExperimentConfig, head: int) -> HeadTensors:
    prng = Prng(config.seed).derive(head, 0)
    D = config.head_dim
    steps = config.decode_steps
    if not config.channel_heterogeneity:
        return HeadTensors(
            q_window=prng.normal_matrix(config.window, D),
            K=prng.normal_matrix(config.seq_len, D),
            V=prng.normal_matrix(config.seq_len, D),
            decode_q=prng.normal_matrix(steps, D),
            decode_k=prng.normal_matrix(steps, D),
            decode_v=prng.normal_matrix(steps, D),
        )
    qk_scale = _log_uniform(prng, D, 0.1, 10.0)
    v_scale = _log_uniform(prng, D, 0.1, 10.0)
    q_window = _qk_matrix(prng, config.window, qk_scale)
    K = _qk_matrix(prng, config.seq_len, qk_scale)
    V = _v_matrix(prng, config.seq_len, v_scale)
    decode_q = _qk_matrix(prng, steps, qk_scale)
    decode_k = _qk_matrix(prng, steps, qk_scale)
    decode_v = _v_matrix(prng, steps, v_scale)
    # soften the logit range: with raw scales the softmax collapses to an
    # argmax and every comparison degenerates into argmax agreement
    q_bar = q_window.mean(axis=0, dtype=np.float64).astype(np.float32)
    logits = (K @ q_bar) / math.sqrt(D)
    rescale = np.float32(_LOGIT_STD / max(float(logits.std()), 1e-9))
    return HeadTensors(
        q_window=q_window,
        K=(K * rescale).astype(np.float32),
        V=V,
        decode_q=decode_q,
        decode_k=(decode_k * rescale).astype(np.float32),
        decode_v=decode_v,
    )


def generate_synthetic(config: ExperimentConfig) -> list[HeadTensors]:
    """Per-head tensors, bit-identical for identical (config, seed)."""
    return [generate_head(config, h) for h in range(config.heads)]


def heads_to_tensors(heads: list[HeadTensors]) -> dict[str, np.ndarray]:
    """Flatten head tensors into bundle-ready named arrays."""
    out: dict[str, np.ndarray] = {}
    for h, data in enumerate(heads):
        values = (data.q_window, data.K, data.V, data.decode_q, data.decode_k, data.decode_v)
        for name, arr in zip(_FIELDS, values):
            out[f"head{h}.{name}"] = arr
    return out


def heads_from_tensors(tensors: dict[str, np.ndarray]) -> list[HeadTensors]:
    """Group bundle arrays back into per-head tensors; shapes must agree."""
    count = 0
    while f"head{count}.k" in tensors:
        count += 1
    if count == 0:
        raise ValueError("bundle holds no head tensors (expected names like 'head0.k')")
    heads = []
    for h in range(count):
        try:
            arrays = [np.asarray(tensors[f"head{h}.{name}"], dtype=np.float32) for name in _FIELDS]
        except KeyError as exc:
            raise ValueError(f"bundle is missing tensor {exc.args[0]!r}") from None
        q_window, K, V, decode_q, decode_k, decode_v = arrays
        D = K.shape[1] if K.ndim == 2 else 0
        for name, arr in zip(_FIELDS, arrays):
            if arr.ndim != 2 or arr.shape[1] != D:
                raise ValueError(f"head{h}.{name} must be 2-D with {D} channels")
        if K.shape != V.shape:
            raise ValueError(f"head{h}: key and value shapes differ")
        if not (decode_q.shape == decode_k.shape == decode_v.shape):
            raise ValueError(f"head{h}: decode stream shapes differ")
        if heads and (K.shape != heads[0].K.shape or q_window.shape != heads[0].q_window.shape):
            raise ValueError("heads must share one shape")
        heads.append(HeadTensors(q_window, K, V, decode_q, decode_k, decode_v))
    return heads
