"""Checkpoints (binary, atomic) and JSONL metrics logging.

Checkpoint layout: magic "RBMP", version u32 LE, header-length u32 LE, a
JSON header (dims, rng states, pool shapes, metadata), then little-endian
payload arrays: visible bias, hidden bias, weights row-major as float64,
followed by each pool's visible and hidden chain states as uint8.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"RBMP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file failed structural validation."""


def encode_rng_state(state):
    """Make a bit-generator state dict JSON-serializable.

    Some generators (SFC64, Philox) keep uint64 arrays in their state;
    these become tagged lists and round-trip through decode_rng_state.
    """
    if isinstance(state, dict):
        return {k: encode_rng_state(v) for k, v in state.items()}
    if isinstance(state, np.ndarray):
        return {"__ndarray__": state.tolist(), "dtype": str(state.dtype)}
    if isinstance(state, np.integer):
        return int(state)
    return state


def decode_rng_state(state):
    if isinstance(state, dict):
        if "__ndarray__" in state:
            return np.asarray(state["__ndarray__"], dtype=state["dtype"])
        return {k: decode_rng_state(v) for k, v in state.items()}
    return state


def generator_from_state(state):
    """Rebuild a numpy Generator from a (decoded) bit-generator state dict."""
    bit_gen = getattr(np.random, state["bit_generator"])()
    bit_gen.state = state
    return np.random.Generator(bit_gen)


@dataclass
class PoolSnapshot:
    V: np.ndarray            # (S, M) of 0/1
    H: np.ndarray            # (S, N) of 0/1
    clamp: int | None
    rng_state: dict


@dataclass
class Checkpoint:
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    weights: np.ndarray
    rng_state: dict | None = None        # run-level generator
    pools: list = field(default_factory=list)  # PoolSnapshot
    meta: dict = field(default_factory=dict)   # step counts, config hash, unit ids
    format_version: int = FORMAT_VERSION


def save_checkpoint(path, ckpt: Checkpoint):
    """Write atomically (temp file + rename)."""
    b = np.asarray(ckpt.visible_bias, dtype="<f8")
    c = np.asarray(ckpt.hidden_bias, dtype="<f8")
    w = np.asarray(ckpt.weights, dtype="<f8")
    m, n = b.shape[0], c.shape[0]
    if w.shape != (m, n):
        raise CheckpointError(f"weight shape {w.shape} inconsistent with dims ({m}, {n})")
    header = {
        "m": m,
        "n": n,
        "rng_state": encode_rng_state(ckpt.rng_state),
        "pools": [
            {"size": int(p.V.shape[0]), "clamp": p.clamp,
             "rng_state": encode_rng_state(p.rng_state)}
            for p in ckpt.pools
        ],
        "meta": ckpt.meta,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
            f.write(header_bytes)
            f.write(b.tobytes())
            f.write(c.tobytes())
            f.write(w.tobytes())
            for p in ckpt.pools:
                f.write(np.asarray(p.V, dtype=np.uint8).tobytes())
                f.write(np.asarray(p.H, dtype=np.uint8).tobytes())
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed writing checkpoint {path}: {exc}") from exc
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _take(buf, count, path):
    if len(buf) < count:
        raise CheckpointError(
            f"{path}: payload truncated, needed {count} more bytes, found {len(buf)}"
        )
    return buf[:count], buf[count:]


def load_checkpoint(path) -> Checkpoint:
    path = os.fspath(path)
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {version}, this build reads {FORMAT_VERSION}"
        )
    header_bytes, buf = _take(raw[12:], header_len, path)
    header = json.loads(header_bytes.decode("utf-8"))
    m, n = header["m"], header["n"]

    def read_f64(buf, count):
        chunk, buf = _take(buf, count * 8, path)
        return np.frombuffer(chunk, dtype="<f8").copy(), buf

    b, buf = read_f64(buf, m)
    c, buf = read_f64(buf, n)
    w_flat, buf = read_f64(buf, m * n)
    pools = []
    for pinfo in header["pools"]:
        s = pinfo["size"]
        vchunk, buf = _take(buf, s * m, path)
        hchunk, buf = _take(buf, s * n, path)
        pools.append(PoolSnapshot(
            V=np.frombuffer(vchunk, dtype=np.uint8).reshape(s, m).astype(np.float64),
            H=np.frombuffer(hchunk, dtype=np.uint8).reshape(s, n).astype(np.float64),
            clamp=pinfo["clamp"],
            rng_state=decode_rng_state(pinfo["rng_state"]),
        ))
    if buf:
        raise CheckpointError(f"{path}: {len(buf)} unexpected trailing bytes")
    return Checkpoint(
        visible_bias=b,
        hidden_bias=c,
        weights=w_flat.reshape(m, n),
        rng_state=decode_rng_state(header["rng_state"]),
        pools=pools,
        meta=header["meta"],
        format_version=version,
    )


def append_metrics(path, record):
    """Append one JSON object per line; None-valued fields are omitted.

    Floats serialize with shortest round-trip repr, which preserves full
    double precision.
    """
    clean = {k: v for k, v in record.items() if v is not None}
    line = json.dumps(clean)
    with open(path, "a", encoding="utf-8") as f:
        f.write(line + "\n")
        f.flush()
        os.fsync(f.fileno())


def append_metrics_many(path, records):
    """Append many records with a single open/flush (bulk trace dumps)."""
    with open(path, "a", encoding="utf-8") as f:
        for record in records:
            clean = {k: v for k, v in record.items() if v is not None}
            f.write(json.dumps(clean) + "\n")
        f.flush()
        os.fsync(f.fileno())
