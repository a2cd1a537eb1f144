"""Hot-kernel dispatch: compiled extension when built, numpy otherwise.

The decode loop spends nearly all of its time in four kernels — dense
attention for one query, zero-fill reconstruction of a packed cache, and
the two recovery fills. Both backends implement the same contracts;
``set_backend`` exists so tests and the benchmark can pin one explicitly.

All kernels take pre-packed rows as (offsets, indices, values): ``offsets``
is the int64 CSR row-offset array (length S+1), ``indices`` the int32 kept
channel ids (ascending within each row), ``values`` the fp32 payloads.
"""

from __future__ import annotations

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"fallback": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active_name = "compiled" if _compiled is not None else "fallback"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active_name


def set_backend(name: str) -> None:
    global _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active_name = name


def _f32(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float32)


def attend(q, K, V):
    """softmax(q.K^T / sqrt(D)) and its weighted sum over V.

    Returns ``(weights, output)`` as fp32 arrays of shape (S,) and (D,).
    """
    q = _f32(q)
    K = _f32(K)
    V = _f32(V)
    S, D = K.shape
    if S < 1:
        raise ValueError("attention needs at least one key row")
    if q.shape != (D,) or V.shape != (S, D):
        raise ValueError(f"shape mismatch: q{q.shape} K{K.shape} V{V.shape}")
    return _BACKENDS[_active_name].attend(q, K, V)


def scatter_rows(offsets, indices, values, ncols: int) -> np.ndarray:
    """Packed rows to dense, zero-filling the missing positions."""
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int32)
    values = _f32(values)
    return _BACKENDS[_active_name].scatter_rows(offsets, indices, values, int(ncols))


def fill_rowconst(offsets, indices, values, ncols: int, row_fill, denom) -> np.ndarray:
    """Packed rows to dense; missing (t, j) gets ``row_fill[t] / denom[j]``."""
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int32)
    values = _f32(values)
    row_fill = _f32(row_fill)
    denom = _f32(denom)
    return _BACKENDS[_active_name].fill_rowconst(
        offsets, indices, values, int(ncols), row_fill, denom
    )


def fill_flat(offsets, indices, values, ncols: int, fill_values, denom) -> np.ndarray:
    """Packed rows to dense; missing positions consume ``fill_values`` in
    row-major order, each divided by its channel's ``denom`` entry."""
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int32)
    values = _f32(values)
    fill_values = _f32(fill_values)
    denom = _f32(denom)
    S = len(offsets) - 1
    expected = S * int(ncols) - len(indices)
    if len(fill_values) != expected:
        raise ValueError(f"need {expected} fill values, got {len(fill_values)}")
    return _BACKENDS[_active_name].fill_flat(
        offsets, indices, values, int(ncols), fill_values, denom
    )
