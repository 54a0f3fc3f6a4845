"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"NVGANCK1"            magic, 8 bytes
    u32 version
    u32 header_length
    header                 UTF-8 JSON, keys sorted: tensor table, RNG state,
                           counters, free-form metadata
    u32 crc32              over header + payload
    payload                raw little-endian array buffers in table order

Saving the same state twice yields identical bytes, so ``save -> load ->
save`` round-trips byte for byte.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

MAGIC = b"NVGANCK1"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
_CRC = struct.Struct("<I")


@dataclass
class Checkpoint:
    arrays: "OrderedDict[str, np.ndarray]"
    rng_state: dict
    counters: dict
    meta: dict = field(default_factory=dict)
    version: int = VERSION


def _table_entry(name: str, arr: np.ndarray, offset: int) -> dict:
    return {
        "name": name,
        "dtype": arr.dtype.newbyteorder("<").str,
        "shape": list(arr.shape),
        "offset": offset,
        "nbytes": int(arr.nbytes),
    }


def encode(ckpt: Checkpoint) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in ckpt.arrays.items():
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        table.append(_table_entry(name, le, offset))
        chunks.append(le.tobytes())
        offset += le.nbytes
    header = json.dumps(
        {"tensors": table, "rng": ckpt.rng_state, "counters": ckpt.counters, "meta": ckpt.meta},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    payload = b"".join(chunks)
    crc = zlib.crc32(payload, zlib.crc32(header))
    return _PREFIX.pack(MAGIC, ckpt.version, len(header)) + header + _CRC.pack(crc) + payload


def decode(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size:
        if not MAGIC.startswith(blob[: len(MAGIC)]):
            raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
        raise CheckpointTruncatedError("checkpoint shorter than its fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointFormatError(f"not a checkpoint file (magic {magic!r})")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(blob) < start + hlen + _CRC.size:
        raise CheckpointTruncatedError("checkpoint header is truncated")
    header = blob[start : start + hlen]
    (crc,) = _CRC.unpack_from(blob, start + hlen)
    payload = blob[start + hlen + _CRC.size :]
    try:
        meta = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointChecksumError(f"checkpoint header is corrupt: {exc}") from None
    expected = sum(t["nbytes"] for t in meta["tensors"])
    if len(payload) < expected:
        raise CheckpointTruncatedError(f"payload has {len(payload)} bytes, expected {expected}")
    if zlib.crc32(payload, zlib.crc32(header)) != crc:
        raise CheckpointChecksumError("checkpoint CRC32 mismatch")
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for t in meta["tensors"]:
        buf = payload[t["offset"] : t["offset"] + t["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(t["dtype"])).reshape(t["shape"])
        arrays[t["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return Checkpoint(arrays=arrays, rng_state=meta["rng"], counters=meta["counters"], meta=meta["meta"], version=version)


def write_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(ckpt))
    os.replace(tmp, path)


def read_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode(blob)


# ---------------------------------------------------------------------------
# training-state glue
# ---------------------------------------------------------------------------


def checkpoint_from_state(state, meta: dict | None = None) -> Checkpoint:
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, arr in state.generator.state_arrays().items():
        arrays[f"generator.{name}"] = arr
    for name, arr in state.discriminator.state_arrays().items():
        arrays[f"discriminator.{name}"] = arr
    for tag, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        for i, (m, v) in enumerate(zip(opt.state.m, opt.state.v)):
            arrays[f"{tag}.m.{i}"] = m
            arrays[f"{tag}.v.{i}"] = v
    counters = {
        "epoch": state.epoch,
        "seed": state.seed,
        "batch_size": state.batch_size,
        "opt_g": _adam_hyper(state.opt_g),
        "opt_d": _adam_hyper(state.opt_d),
        "loss": {"lambda1": state.loss.lambda1, "lambda2": state.loss.lambda2},
    }
    return Checkpoint(arrays=arrays, rng_state=state.rng.bit_generator.state, counters=counters, meta=meta or {})


def _adam_hyper(opt) -> dict:
    s = opt.state
    return {"t": s.t, "lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps}


def restore_state(state, ckpt: Checkpoint) -> None:
    """Load a checkpoint into an already-constructed :class:`TrainingState`."""
    arrays = ckpt.arrays
    try:
        state.generator.load_state_arrays({k[10:]: v for k, v in arrays.items() if k.startswith("generator.")})
        state.discriminator.load_state_arrays(
            {k[14:]: v for k, v in arrays.items() if k.startswith("discriminator.")}
        )
        for tag, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
            for i in range(len(opt.state.m)):
                opt.state.m[i][...] = arrays[f"{tag}.m.{i}"]
                opt.state.v[i][...] = arrays[f"{tag}.v.{i}"]
            for k, v in ckpt.counters[tag].items():
                setattr(opt.state, k, v)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks entry {exc} required by this model") from None
    except ValueError as exc:
        raise CheckpointError(f"checkpoint does not fit this model: {exc}") from None
    state.epoch = ckpt.counters["epoch"]
    state.seed = ckpt.counters["seed"]
    state.batch_size = ckpt.counters["batch_size"]
    state.rng.bit_generator.state = ckpt.rng_state


def save_checkpoint(path, state, meta: dict | None = None) -> Checkpoint:
    ckpt = checkpoint_from_state(state, meta)
    write_checkpoint(path, ckpt)
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    return read_checkpoint(path)
