"""Numpy implementations of the decode-loop hot kernels.

Mirror of the compiled ``_kernels`` extension; selected automatically when
the extension is unavailable. Inputs are pre-sanitized by
:mod:`kvchannel.kernels` (C-contiguous, int64 offsets, int32 indices,
fp32 payloads).
"""

import math

import numpy as np


def attend(q, K, V):
    S, D = K.shape
    logits = (K @ q).astype(np.float64) * (1.0 / math.sqrt(D))
    logits -= logits.max()
    e = np.exp(logits)
    weights = (e / e.sum()).astype(np.float32)
    out = weights @ V
    return weights, out


def _row_index(offsets, n_entries):
    counts = np.diff(offsets)
    return np.repeat(np.arange(len(counts), dtype=np.int64), counts)


def scatter_rows(offsets, indices, values, ncols):
    S = len(offsets) - 1
    out = np.zeros((S, ncols), dtype=np.float32)
    if len(indices):
        out[_row_index(offsets, len(indices)), indices] = values
    return out


def fill_rowconst(offsets, indices, values, ncols, row_fill, denom):
    out = np.divide.outer(row_fill, denom)
    if len(indices):
        out[_row_index(offsets, len(indices)), indices] = values
    return out


def fill_flat(offsets, indices, values, ncols, fill_values, denom):
    S = len(offsets) - 1
    keep = np.zeros((S, ncols), dtype=bool)
    rows = _row_index(offsets, len(indices))
    if len(indices):
        keep[rows, indices] = True
    out = np.zeros((S, ncols), dtype=np.float32)
    pruned = np.flatnonzero(~keep.ravel())  # row-major pruned order
    out.ravel()[pruned] = fill_values / denom[pruned % ncols]
    if len(indices):
        out[rows, indices] = values
    return out
