import json
import struct

import numpy as np
import pytest

from kvchannel.cli.bundle import (
    MAGIC,
    BundleError,
    BundleErrorCode,
    load_bundle,
    save_bundle,
)
from kvchannel.numerics import Prng


def sample_tensors():
    prng = Prng(1)
    return {
        "head0.k": prng.normal_matrix(5, 4),
        "head0.v": prng.normal_matrix(5, 4),
        "offsets": np.arange(6, dtype=np.int64),
        "indices": np.array([0, 2, 3], dtype=np.int32),
    }


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        path = tmp_path / "t.spkv"
        tensors = sample_tensors()
        save_bundle(path, tensors)
        back = load_bundle(path)
        assert list(back) == list(tensors)
        for name in tensors:
            assert back[name].dtype == tensors[name].dtype
            np.testing.assert_array_equal(back[name], tensors[name])

    def test_empty_bundle(self, tmp_path):
        path = tmp_path / "empty.spkv"
        save_bundle(path, {})
        assert load_bundle(path) == {}

    def test_scalarish_shapes(self, tmp_path):
        path = tmp_path / "s.spkv"
        save_bundle(path, {"x": np.zeros((0, 3), np.float32)})
        assert load_bundle(path)["x"].shape == (0, 3)


class TestFaultInjection:
    def test_corrupted_magic(self, tmp_path):
        path = tmp_path / "bad.spkv"
        save_bundle(path, sample_tensors())
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(BundleError) as err:
            load_bundle(path)
        assert err.value.code is BundleErrorCode.MAGIC_MISMATCH

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.spkv"
        save_bundle(path, sample_tensors())
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(BundleError) as err:
            load_bundle(path)
        assert err.value.code is BundleErrorCode.TRUNCATED

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "hdr.spkv"
        save_bundle(path, sample_tensors())
        path.write_bytes(path.read_bytes()[: len(MAGIC) + 2])
        with pytest.raises(BundleError) as err:
            load_bundle(path)
        assert err.value.code is BundleErrorCode.TRUNCATED

    def test_garbage_header(self, tmp_path):
        path = tmp_path / "json.spkv"
        header = b"not json at all"
        path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header)
        with pytest.raises(BundleError) as err:
            load_bundle(path)
        assert err.value.code is BundleErrorCode.BAD_HEADER

    def test_unknown_dtype_on_load(self, tmp_path):
        path = tmp_path / "dtype.spkv"
        entries = [{"name": "x", "dtype": "f16", "shape": [1], "offset": 0}]
        header = json.dumps(entries).encode()
        path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + b"\x00\x00")
        with pytest.raises(BundleError) as err:
            load_bundle(path)
        assert err.value.code is BundleErrorCode.UNKNOWN_DTYPE

    def test_unknown_dtype_on_save(self, tmp_path):
        with pytest.raises(BundleError) as err:
            save_bundle(tmp_path / "x.spkv", {"x": np.zeros(2, np.float64)})
        assert err.value.code is BundleErrorCode.UNKNOWN_DTYPE

    def test_offset_gap_rejected(self, tmp_path):
        path = tmp_path / "gap.spkv"
        entries = [
            {"name": "a", "dtype": "f32", "shape": [1], "offset": 0},
            {"name": "b", "dtype": "f32", "shape": [1], "offset": 8},
        ]
        header = json.dumps(entries).encode()
        path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + b"\x00" * 12)
        with pytest.raises(BundleError) as err:
            load_bundle(path)
        assert err.value.code is BundleErrorCode.LAYOUT_MISMATCH

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "trail.spkv"
        save_bundle(path, {"x": np.zeros(2, np.float32)})
        path.write_bytes(path.read_bytes() + b"\x99")
        with pytest.raises(BundleError) as err:
            load_bundle(path)
        assert err.value.code is BundleErrorCode.LAYOUT_MISMATCH

    def test_duplicate_names_rejected(self, tmp_path):
        path = tmp_path / "dup.spkv"
        entries = [
            {"name": "a", "dtype": "f32", "shape": [1], "offset": 0},
            {"name": "a", "dtype": "f32", "shape": [1], "offset": 4},
        ]
        header = json.dumps(entries).encode()
        path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + b"\x00" * 8)
        with pytest.raises(BundleError) as err:
            load_bundle(path)
        assert err.value.code is BundleErrorCode.BAD_HEADER
