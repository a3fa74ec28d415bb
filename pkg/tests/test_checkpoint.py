"""Tensor container round-trips and integrity helpers."""

import numpy as np
import pytest

from motiongen.checkpoint import (
    checkpoint_digest,
    load_checkpoint,
    save_checkpoint,
    tensor_checksum,
)
from motiongen.errors import BadMagicError


class TestContainer:
    def test_round_trip(self, rng, tmp_path):
        tensors = {
            "a.w": rng.standard_normal((3, 4)).astype(np.float32),
            "nested.name.b": rng.standard_normal(7).astype(np.float32),
            "scalar3d": rng.standard_normal((2, 2, 2)).astype(np.float32),
        }
        meta = {"kind": "denoiser", "step": 42, "schedule_kind": "cosine",
                "model_config": {"n_layers": 2}}
        path = tmp_path / "m.omgc"
        save_checkpoint(path, meta, tensors)
        meta2, tensors2 = load_checkpoint(path)
        assert meta2 == meta
        assert set(tensors2) == set(tensors)
        for name in tensors:
            np.testing.assert_array_equal(tensors2[name], tensors[name])

    def test_deterministic_bytes(self, rng, tmp_path):
        tensors = {"x": rng.standard_normal((5, 5)).astype(np.float32)}
        p1, p2 = tmp_path / "a.omgc", tmp_path / "b.omgc"
        save_checkpoint(p1, {"step": 1}, tensors)
        save_checkpoint(p2, {"step": 1}, tensors)
        assert checkpoint_digest(p1) == checkpoint_digest(p2)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.omgc"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(BadMagicError):
            load_checkpoint(path)

    def test_checksum_sensitive_to_single_value(self, rng):
        arr = rng.standard_normal((4, 4)).astype(np.float32)
        before = tensor_checksum(arr)
        arr[2, 2] += 1e-6
        assert tensor_checksum(arr) != before

    def test_unicode_names(self, rng, tmp_path):
        tensors = {"blocks.0.attn.qkv_w": np.ones((2, 2), dtype=np.float32)}
        path = tmp_path / "u.omgc"
        save_checkpoint(path, {"note": "final"}, tensors)
        _, back = load_checkpoint(path)
        assert "blocks.0.attn.qkv_w" in back
