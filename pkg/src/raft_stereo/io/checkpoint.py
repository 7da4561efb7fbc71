"""Versioned binary checkpoint container.

File layout (all integers little-endian)::

    magic  b"RSCKPT\\x00\\x01"
    u32    format version
    u32 n  + n bytes   model config, canonical JSON
    u32 n  + n bytes   metadata JSON (seed, step, optimizer scalars)
    u32    number of tensor records
    records: u16 name length, name (utf-8), u8 ndim, ndim x u32 dims,
             u64 payload bytes, payload (float32 LE), u32 crc32(payload)

Model weights come first, optimizer moments follow under an ``optim/``
prefix. Writes are atomic.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..autograd import ContractError
from ..config import ModelConfig
from ._atomic import atomic_write

MAGIC = b"RSCKPT\x00\x01"
VERSION = 1
OPTIM_PREFIX = "optim/"


class CheckpointError(ValueError):
    """Base class for unreadable or inconsistent checkpoints."""


class VersionMismatchError(CheckpointError):
    pass


class ConfigConflictError(CheckpointError):
    pass


class TensorShapeError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: "OrderedDict[str, np.ndarray]"
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)
    optimizer: Optional[dict] = None


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_checkpoint(cfg: ModelConfig, state: Dict[str, np.ndarray], seed: Optional[int] = None,
                      optimizer: Optional[dict] = None, meta: Optional[dict] = None) -> bytes:
    meta = dict(meta or {})
    meta["seed"] = seed
    records = [(name, arr) for name, arr in state.items()]
    if optimizer is not None:
        scalars = {k: v for k, v in optimizer.items() if k not in ("m", "v")}
        meta["optimizer"] = scalars
        for slot in ("m", "v"):
            records += [(f"{OPTIM_PREFIX}{slot}/{name}", arr) for name, arr in optimizer[slot].items()]
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for blob in (cfg.to_json().encode("utf-8"), _canonical(meta)):
        parts += [struct.pack("<I", len(blob)), blob]
    parts.append(struct.pack("<I", len(records)))
    for name, arr in records:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        payload = arr.tobytes()
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
        parts += [struct.pack(f"<{arr.ndim}I", *arr.shape), struct.pack("<Q", len(payload)), payload]
        parts.append(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    return b"".join(parts)


def save_checkpoint(path, model, optimizer=None, seed: Optional[int] = None, meta: Optional[dict] = None) -> None:
    """Serialise ``model`` (a :class:`RAFTStereo`) and optionally an optimizer."""
    opt_state = optimizer.state_dict() if optimizer is not None else None
    if seed is None:
        seed = getattr(model, "seed", None)
    blob = encode_checkpoint(model.cfg, model.state_dict(), seed, opt_state, meta)
    atomic_write(os.fspath(path), blob)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(buf: bytes, expected: Optional[ModelConfig] = None) -> Checkpoint:
    rd = _Reader(buf)
    if rd.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = rd.unpack("<I", "version")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, this build reads version {VERSION}")
    blobs = []
    for what in ("config", "metadata"):
        (n,) = rd.unpack("<I", f"{what} length")
        blobs.append(rd.take(n, what))
    try:
        cfg = ModelConfig.from_dict(json.loads(blobs[0]))
        meta = json.loads(blobs[1])
    except (ValueError, TypeError, ContractError) as exc:
        raise CheckpointError(f"cannot parse checkpoint header: {exc}") from None
    if expected is not None and expected != cfg:
        conflicts = ", ".join(f"{k}: file={a!r} requested={b!r}" for k, (a, b) in cfg.diff(expected).items())
        raise ConfigConflictError(f"checkpoint config conflicts with requested config ({conflicts})")

    (count,) = rd.unpack("<I", "record count")
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (nlen,) = rd.unpack("<H", "name length")
        name = rd.take(nlen, "tensor name").decode("utf-8")
        (ndim,) = rd.unpack("<B", f"rank of {name!r}")
        shape = rd.unpack(f"<{ndim}I", f"shape of {name!r}") if ndim else ()
        (nbytes,) = rd.unpack("<Q", f"payload size of {name!r}")
        expected_bytes = 4 * int(np.prod(shape, dtype=np.int64))
        if nbytes != expected_bytes:
            raise TensorShapeError(
                f"tensor {name!r}: payload of {nbytes} bytes does not match shape {tuple(shape)} ({expected_bytes} bytes)"
            )
        payload = rd.take(nbytes, f"payload of {name!r}")
        (crc,) = rd.unpack("<I", f"checksum of {name!r}")
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            raise ChecksumError(f"tensor {name!r}: checksum mismatch")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if rd.pos != len(buf):
        raise CheckpointError(f"{len(buf) - rd.pos} unexpected trailing bytes at byte {rd.pos}")

    optimizer = None
    if "optimizer" in meta:
        optimizer = dict(meta["optimizer"])
        for slot in ("m", "v"):
            pre = f"{OPTIM_PREFIX}{slot}/"
            optimizer[slot] = OrderedDict((k[len(pre):], v) for k, v in tensors.items() if k.startswith(pre))
    weights = OrderedDict((k, v) for k, v in tensors.items() if not k.startswith(OPTIM_PREFIX))
    _verify_against_config(cfg, weights)
    return Checkpoint(cfg, weights, meta.get("seed"), meta, optimizer)


def _verify_against_config(cfg: ModelConfig, weights: Dict[str, np.ndarray]) -> None:
    from ..model import RAFTStereo

    reference = RAFTStereo(cfg, seed=0).state_dict()
    missing = [k for k in reference if k not in weights]
    unexpected = [k for k in weights if k not in reference]
    if missing or unexpected:
        raise TensorShapeError(f"checkpoint tensors do not match config: missing {missing[:3]}, unexpected {unexpected[:3]}")
    for name, ref in reference.items():
        if weights[name].shape != ref.shape:
            raise TensorShapeError(f"tensor {name!r}: stored shape {weights[name].shape}, config expects {ref.shape}")


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), expected)


def load_model(path, expected: Optional[ModelConfig] = None):
    """Rebuild a :class:`RAFTStereo` from a checkpoint file."""
    from ..model import RAFTStereo

    ckpt = load_checkpoint(path, expected)
    model = RAFTStereo(ckpt.config, seed=ckpt.seed if ckpt.seed is not None else 0)
    model.load_state_dict(ckpt.tensors)
    return model, ckpt
