import json
import os

import numpy as np
import pytest

from rbmprune.persist import (
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    CheckpointError,
    PoolSnapshot,
    append_metrics,
    append_metrics_many,
    decode_rng_state,
    encode_rng_state,
    generator_from_state,
    load_checkpoint,
    save_checkpoint,
)


def sample_checkpoint(rng, pools=True):
    pool_list = []
    if pools:
        pool_list = [PoolSnapshot(
            V=(rng.random((4, 3)) < 0.5).astype(np.uint8),
            H=(rng.random((4, 2)) < 0.5).astype(np.uint8),
            clamp=1,
            rng_state=np.random.Generator(np.random.SFC64(5)).bit_generator.state,
        )]
    return Checkpoint(
        visible_bias=rng.standard_normal(3),
        hidden_bias=rng.standard_normal(2),
        weights=rng.standard_normal((3, 2)),
        rng_state=np.random.default_rng(7).bit_generator.state,
        pools=pool_list,
        meta={"phase": "test", "steps": 42},
    )


class TestCheckpointRoundTrip:
    def test_arrays_and_meta_survive(self, tmp_path, rng):
        ckpt = sample_checkpoint(rng)
        path = tmp_path / "c.rbmp"
        save_checkpoint(path, ckpt)
        out = load_checkpoint(path)
        assert np.array_equal(out.visible_bias, ckpt.visible_bias)
        assert np.array_equal(out.hidden_bias, ckpt.hidden_bias)
        assert np.array_equal(out.weights, ckpt.weights)
        assert out.meta == ckpt.meta
        assert out.format_version == FORMAT_VERSION

    def test_pool_states_survive(self, tmp_path, rng):
        ckpt = sample_checkpoint(rng)
        path = tmp_path / "c.rbmp"
        save_checkpoint(path, ckpt)
        out = load_checkpoint(path)
        snap = out.pools[0]
        assert np.array_equal(snap.V, ckpt.pools[0].V.astype(float))
        assert np.array_equal(snap.H, ckpt.pools[0].H.astype(float))
        assert snap.clamp == 1

    def test_rng_states_resume_identically(self, tmp_path, rng):
        ckpt = sample_checkpoint(rng)
        path = tmp_path / "c.rbmp"
        save_checkpoint(path, ckpt)
        out = load_checkpoint(path)
        for state in (out.rng_state, out.pools[0].rng_state):
            a = generator_from_state(state)
            b = generator_from_state(state)
            assert np.array_equal(a.random(5), b.random(5))
        # the restored stream continues exactly where the original would
        orig = np.random.default_rng(7)
        restored = generator_from_state(out.rng_state)
        assert np.array_equal(orig.random(8), restored.random(8))

    def test_atomic_replace_leaves_no_temp_files(self, tmp_path, rng):
        path = tmp_path / "c.rbmp"
        save_checkpoint(path, sample_checkpoint(rng))
        save_checkpoint(path, sample_checkpoint(rng))
        assert sorted(os.listdir(tmp_path)) == ["c.rbmp"]

    def test_no_pools(self, tmp_path, rng):
        path = tmp_path / "c.rbmp"
        save_checkpoint(path, sample_checkpoint(rng, pools=False))
        assert load_checkpoint(path).pools == []

    def test_inconsistent_weight_shape(self, tmp_path, rng):
        ckpt = sample_checkpoint(rng)
        ckpt.weights = np.zeros((2, 2))
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "c.rbmp", ckpt)


class TestCheckpointValidation:
    def write(self, tmp_path, rng):
        path = tmp_path / "c.rbmp"
        save_checkpoint(path, sample_checkpoint(rng))
        return path

    def test_bad_magic(self, tmp_path, rng):
        path = self.write(tmp_path, rng)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path, rng):
        path = self.write(tmp_path, rng)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path, rng):
        path = self.write(tmp_path, rng)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path, rng):
        path = self.write(tmp_path, rng)
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)


class TestRngStateCodec:
    def test_uint64_arrays_round_trip_via_json(self):
        state = np.random.Generator(np.random.SFC64(123)).bit_generator.state
        encoded = json.loads(json.dumps(encode_rng_state(state)))
        decoded = decode_rng_state(encoded)
        g1 = generator_from_state(decoded)
        g2 = np.random.Generator(np.random.SFC64(123))
        assert np.array_equal(g1.random(10), g2.random(10))

    def test_plain_int_state_unchanged(self):
        state = np.random.default_rng(1).bit_generator.state
        assert decode_rng_state(json.loads(json.dumps(encode_rng_state(state)))) == state


class TestMetrics:
    def test_append_omits_none_fields(self, tmp_path):
        path = tmp_path / "m.jsonl"
        append_metrics(path, {"step": 1, "kld": None, "err": 0.5})
        rec = json.loads(path.read_text().strip())
        assert rec == {"step": 1, "err": 0.5}

    def test_floats_round_trip_exactly(self, tmp_path):
        path = tmp_path / "m.jsonl"
        x = 0.1234567890123456789
        append_metrics(path, {"x": x})
        assert json.loads(path.read_text())["x"] == x

    def test_bulk_append(self, tmp_path):
        path = tmp_path / "m.jsonl"
        append_metrics_many(path, ({"i": i, "skip": None} for i in range(5)))
        lines = path.read_text().splitlines()
        assert len(lines) == 5
        assert json.loads(lines[3]) == {"i": 3}

    def test_appends_preserve_existing_lines(self, tmp_path):
        path = tmp_path / "m.jsonl"
        append_metrics(path, {"a": 1})
        append_metrics(path, {"b": 2})
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert lines == [{"a": 1}, {"b": 2}]
