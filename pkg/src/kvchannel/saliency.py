"""Per-token channel saliency, channel-subset selection, and error objectives.

The saliency of channel ``j`` at token ``t`` is ``|q̄[j]| * |K[t, j]|``,
where ``q̄`` is the mean query over the observation window. Selection picks,
independently for every token, the channel subset to retain: a fixed count
(top-T), the shortest prefix covering a saliency fraction (top-p), or
group-wise ratios over the descending saliency ranking. All selection is
deterministic: ties break toward the lower channel index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, as_vector


@dataclass(frozen=True)
class SaliencyMatrix:
    """Nonnegative per-token, per-channel importance scores for one head."""

    scores: np.ndarray  # (S, D) fp32, entries >= 0
    head_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scores", as_matrix(self.scores, "saliency scores"))
        if np.any(self.scores < 0):
            raise ValueError("saliency scores must be nonnegative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


@dataclass(frozen=True)
class ChannelMask:
    """Per-token binary retention grid with per-row cardinality bookkeeping."""

    keep: np.ndarray        # (S, D) bool
    kept_count: np.ndarray  # (S,) int64, row-wise popcount of ``keep``

    @classmethod
    def from_grid(cls, keep) -> "ChannelMask":
        grid = np.ascontiguousarray(keep, dtype=bool)
        if grid.ndim != 2:
            raise ValueError(f"mask grid must be 2-D, got shape {grid.shape}")
        return cls(keep=grid, kept_count=grid.sum(axis=1).astype(np.int64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.keep.shape


@dataclass(frozen=True)
class SelectionStrategy:
    """One of: fixed(ratio), top_p(p), grouped(groups, group_ratios)."""

    kind: str
    ratio: float = 0.0
    p: float = 0.99
    groups: int = 4
    group_ratios: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if self.kind not in ("fixed", "top_p", "grouped"):
            raise ValueError(f"unknown selection strategy {self.kind!r}")
        if self.kind == "fixed" and not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"pruning ratio must lie in [0, 1), got {self.ratio}")
        if self.kind == "top_p" and not 0.0 < self.p <= 1.0:
            raise ValueError(f"top-p threshold must lie in (0, 1], got {self.p}")
        if self.kind == "grouped":
            r = self.group_ratios
            if len(r) != self.groups:
                raise ValueError(f"need {self.groups} group ratios, got {len(r)}")
            if any(not 0.0 <= x <= 1.0 for x in r):
                raise ValueError("group ratios must lie in [0, 1]")
            if any(a > b for a, b in zip(r, r[1:])):
                raise ValueError("group ratios must be nondecreasing")

    @classmethod
    def fixed(cls, ratio: float) -> "SelectionStrategy":
        return cls(kind="fixed", ratio=ratio)

    @classmethod
    def top_p(cls, p: float) -> "SelectionStrategy":
        return cls(kind="top_p", p=p)

    @classmethod
    def grouped(cls, groups: int, group_ratios) -> "SelectionStrategy":
        return cls(kind="grouped", groups=groups, group_ratios=tuple(group_ratios))


def retained_count(ratio: float, n: int) -> int:
    """floor((1 - ratio) * n), snapping away float noise at integer boundaries."""
    v = (1.0 - ratio) * n
    nearest = round(v)
    if abs(v - nearest) < 1e-9:
        return int(nearest)
    return int(math.floor(v))


def mean_query(q_window) -> np.ndarray:
    """Column mean of the observation-window queries (W x D -> D)."""
    Q = as_matrix(q_window, "query window")
    if Q.shape[0] < 1:
        raise ValueError("query window must contain at least one row")
    return Q.mean(axis=0, dtype=np.float64).astype(np.float32)


def saliency(q_bar, K, head_id: int = 0) -> SaliencyMatrix:
    """Score every (token, channel) as ``|q̄[j]| * |K[t, j]|``."""
    q = as_vector(q_bar, "mean query")
    keys = as_matrix(K, "keys")
    if keys.shape[1] != q.shape[0]:
        raise ValueError(f"dimension mismatch: q̄ has {q.shape[0]} channels, keys {keys.shape[1]}")
    return SaliencyMatrix(scores=np.abs(q)[None, :] * np.abs(keys), head_id=head_id)


def _descending_order(scores: np.ndarray) -> np.ndarray:
    # stable sort of the negated scores: ties resolve to the lower index
    return np.argsort(-scores, axis=1, kind="stable")


def select_fixed(W: SaliencyMatrix, ratio: float) -> ChannelMask:
    """Keep the T = floor((1-ratio)*D) highest-saliency channels per token."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"pruning ratio must lie in [0, 1), got {ratio}")
    S, D = W.shape
    T = retained_count(ratio, D)
    if T < 1:
        raise ValueError(f"ratio {ratio} with {D} channels retains no channel")
    order = _descending_order(W.scores)
    keep = np.zeros((S, D), dtype=bool)
    keep[np.arange(S)[:, None], order[:, :T]] = True
    return ChannelMask.from_grid(keep)


def select_top_p(W: SaliencyMatrix, p: float) -> ChannelMask:
    """Keep the shortest descending-saliency prefix summing to >= p of the row total.

    A row whose scores are all zero keeps exactly one channel (index 0):
    the recovery formula cannot represent an empty row.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"top-p threshold must lie in (0, 1], got {p}")
    S, D = W.shape
    order = _descending_order(W.scores)
    keep = np.zeros((S, D), dtype=bool)
    for t in range(S):
        row = W.scores[t, order[t]].astype(np.float64)
        csum = np.cumsum(row)
        # for an all-zero row, csum[0] == 0 >= p*0 already keeps channel 0
        k = int(np.searchsorted(csum, p * csum[-1], side="left"))
        keep[t, order[t, : k + 1]] = True
    return ChannelMask.from_grid(keep)


def _group_sizes(D: int, g: int) -> list[int]:
    base, rem = divmod(D, g)
    return [base + 1 if k < rem else base for k in range(g)]


def select_grouped(W: SaliencyMatrix, groups: int, group_ratios) -> ChannelMask:
    """Partition the descending ranking into ``groups`` contiguous segments and
    prune each segment at its own ratio.

    Segment sizes are as equal as possible, any remainder going to the
    most-salient segments. Segment k keeps floor((1-ratio[k])*size) of its
    top channels; the most-salient segment always keeps at least one.
    """
    strategy = SelectionStrategy.grouped(groups, group_ratios)
    S, D = W.shape
    if groups > D:
        raise ValueError(f"cannot split {D} channels into {groups} groups")
    sizes = _group_sizes(D, groups)
    order = _descending_order(W.scores)
    keep = np.zeros((S, D), dtype=bool)
    for t in range(S):
        start = 0
        for k, size in enumerate(sizes):
            kept = retained_count(strategy.group_ratios[k], size)
            if k == 0:
                kept = max(1, kept)
            if kept:
                keep[t, order[t, start : start + kept]] = True
            start += size
    return ChannelMask.from_grid(keep)


def select(W: SaliencyMatrix, strategy: SelectionStrategy) -> ChannelMask:
    if strategy.kind == "fixed":
        return select_fixed(W, strategy.ratio)
    if strategy.kind == "top_p":
        return select_top_p(W, strategy.p)
    return select_grouped(W, strategy.groups, strategy.group_ratios)


def selection_objective(W: SaliencyMatrix, mask: ChannelMask) -> np.ndarray:
    """Per-row sum of retained saliency (the quantity selection maximizes)."""
    if mask.shape != W.shape:
        raise ValueError("mask and saliency shapes differ")
    return np.sum(W.scores.astype(np.float64) * mask.keep, axis=1)


def error_exact(q_window, K, mask: ChannelMask) -> float:
    """Frobenius norm of the logit discrepancy caused by pruning.

    Computes ``|| Q K^T - Q (K o mask)^T ||_F`` over the window queries;
    masking a key row also masks the paired query contribution, which for a
    binary mask collapses to masking the key factor alone.
    """
    Q = as_matrix(q_window, "query window").astype(np.float64)
    keys = as_matrix(K, "keys").astype(np.float64)
    if mask.shape != keys.shape:
        raise ValueError("mask and key shapes differ")
    diff = Q @ keys.T - Q @ (keys * mask.keep).T
    return float(np.sqrt(np.sum(diff * diff)))


def error_expansion(q_window, K, mask: ChannelMask) -> float:
    """Squared pruning error evaluated channel-pair by channel-pair.

    Splits the squared Frobenius norm into a per-channel diagonal term and
    an inter-channel cross term, each weighted by the retained/pruned
    pattern; with per-token masks the token sums carry the mask inside.
    Cross terms vanish when channel columns are orthogonal.
    """
    Q = as_matrix(q_window, "query window").astype(np.float64)
    keys = as_matrix(K, "keys").astype(np.float64)
    if mask.shape != keys.shape:
        raise ValueError("mask and key shapes differ")
    Z = mask.keep.astype(np.float64)
    D = keys.shape[1]
    total = 0.0
    for j in range(D):
        kj = keys[:, j]
        zj = Z[:, j]
        qj = Q[:, j]
        total += float(qj @ qj) * float(np.sum(kj * kj * (1.0 - zj)))
        for r in range(j + 1, D):
            qq = float(qj @ Q[:, r])
            kk = float(np.sum(kj * keys[:, r] * (1.0 - zj * Z[:, r])))
            total += 2.0 * qq * kk
    return total


def coefficient_of_variation(W: SaliencyMatrix) -> np.ndarray:
    """Per-channel std-over-mean of saliency across tokens (population std).

    Channels whose mean is zero get NaN; aggregate with :func:`mean_cv`,
    which skips them.
    """
    scores = W.scores.astype(np.float64)
    mean = scores.mean(axis=0)
    std = scores.std(axis=0)
    cv = np.full(scores.shape[1], np.nan)
    nonzero = mean != 0.0
    cv[nonzero] = std[nonzero] / mean[nonzero]
    return cv


def mean_cv(W: SaliencyMatrix) -> float:
    """Mean coefficient of variation over channels with defined CV."""
    cv = coefficient_of_variation(W)
    if np.all(np.isnan(cv)):
        raise ValueError("no channel has a nonzero mean saliency")
    return float(np.nanmean(cv))
