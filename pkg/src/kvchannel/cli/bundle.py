"""Tensor-bundle container: magic, JSON header, raw little-endian payloads.

Layout: 8-byte magic ``SPKV0001``, a 4-byte little-endian header length, a
UTF-8 JSON array of entries ``{"name", "dtype", "shape", "offset"}``, then
the row-major payloads packed contiguously in entry order (``offset`` is
relative to the payload section). Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from enum import Enum

import numpy as np

MAGIC = b"SPKV0001"

_DTYPES = {"f32": "<f4", "i32": "<i4", "i64": "<i8"}
_NUMPY_DTYPES = {np.dtype(np.float32): "f32", np.dtype(np.int32): "i32", np.dtype(np.int64): "i64"}


class BundleErrorCode(Enum):
    MAGIC_MISMATCH = "magic_mismatch"
    TRUNCATED = "truncated"
    BAD_HEADER = "bad_header"
    LAYOUT_MISMATCH = "layout_mismatch"
    UNKNOWN_DTYPE = "unknown_dtype"


class BundleError(Exception):
    def __init__(self, code: BundleErrorCode, message: str):
        super().__init__(f"{code.value}: {message}")
        self.code = code


def save_bundle(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors; fp32/int32/int64 only, insertion order kept."""
    entries = []
    payloads = []
    offset = 0
    for name, array in tensors.items():
        arr = np.ascontiguousarray(array)
        if arr.dtype not in _NUMPY_DTYPES:
            raise BundleError(
                BundleErrorCode.UNKNOWN_DTYPE, f"{name}: unsupported dtype {arr.dtype}"
            )
        tag = _NUMPY_DTYPES[arr.dtype]
        raw = arr.astype(_DTYPES[tag]).tobytes(order="C")
        entries.append(
            {"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset}
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)


def load_bundle(path) -> dict[str, np.ndarray]:
    """Read a bundle back; raises :class:`BundleError` with a distinct code
    for bad magic, truncation, malformed headers, layout inconsistencies,
    and unknown dtypes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC):
        raise BundleError(BundleErrorCode.TRUNCATED, "file shorter than the magic")
    if blob[: len(MAGIC)] != MAGIC:
        raise BundleError(BundleErrorCode.MAGIC_MISMATCH, f"expected {MAGIC!r}")
    if len(blob) < len(MAGIC) + 4:
        raise BundleError(BundleErrorCode.TRUNCATED, "missing header length")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    header_start = len(MAGIC) + 4
    if len(blob) < header_start + header_len:
        raise BundleError(BundleErrorCode.TRUNCATED, "header shorter than declared")
    try:
        entries = json.loads(blob[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleError(BundleErrorCode.BAD_HEADER, str(exc)) from None
    if not isinstance(entries, list):
        raise BundleError(BundleErrorCode.BAD_HEADER, "header must be a JSON array")

    payload = blob[header_start + header_len :]
    tensors: dict[str, np.ndarray] = {}
    expected_offset = 0
    for entry in entries:
        if not isinstance(entry, dict) or not {"name", "dtype", "shape", "offset"} <= set(entry):
            raise BundleError(BundleErrorCode.BAD_HEADER, f"malformed entry: {entry!r}")
        name = entry["name"]
        shape = entry["shape"]
        if (
            not isinstance(name, str)
            or not isinstance(shape, list)
            or any(not isinstance(d, int) or d < 0 for d in shape)
        ):
            raise BundleError(BundleErrorCode.BAD_HEADER, f"malformed entry: {entry!r}")
        if name in tensors:
            raise BundleError(BundleErrorCode.BAD_HEADER, f"duplicate tensor name {name!r}")
        if entry["dtype"] not in _DTYPES:
            raise BundleError(
                BundleErrorCode.UNKNOWN_DTYPE, f"{name}: dtype {entry['dtype']!r}"
            )
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        offset = entry["offset"]
        if offset != expected_offset:
            raise BundleError(
                BundleErrorCode.LAYOUT_MISMATCH,
                f"{name}: offset {offset} does not follow previous entry ({expected_offset})",
            )
        if offset + nbytes > len(payload):
            raise BundleError(
                BundleErrorCode.TRUNCATED,
                f"{name}: payload needs {offset + nbytes} bytes, have {len(payload)}",
            )
        data = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        tensors[name] = data.reshape(shape).copy()
        expected_offset = offset + nbytes
    if expected_offset != len(payload):
        raise BundleError(
            BundleErrorCode.LAYOUT_MISMATCH,
            f"payload holds {len(payload)} bytes but entries cover {expected_offset}",
        )
    return tensors
