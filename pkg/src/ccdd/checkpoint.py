"""Versioned binary checkpoints.

Layout, all little-endian:

  magic "CCDD" | u32 version | u64 len + config text (utf-8)
  | tensor table (parameters) | tensor table (optimizer moments)
  | u64 len + RNG state bytes | u64 step counter

A tensor table is a u32 count followed by entries of
(u16 name_len, name, u8 dtype tag (0 = f32), u8 rank, u32 dims..., payload).
Payloads are row-major f32. Files round-trip bit-exactly; loading against a
mismatched config identity fails loudly.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .errors import (
    BadMagicError,
    CheckpointError,
    TruncatedPayloadError,
    VersionMismatchError,
)

MAGIC = b"CCDD"
VERSION = 1
DTYPE_F32 = 0


def config_hash(identity_text: str) -> str:
    return hashlib.sha256(identity_text.encode("utf-8")).hexdigest()


def _encode_table(tensors: dict[str, torch.Tensor]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, tensor in tensors.items():
        data = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<BB", DTYPE_F32, data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedPayloadError(
                f"truncated payload: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_table(reader: _Reader) -> dict[str, torch.Tensor]:
    (count,) = reader.unpack("<I")
    out: dict[str, torch.Tensor] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        dtype_tag, rank = reader.unpack("<BB")
        if dtype_tag != DTYPE_F32:
            raise CheckpointError(f"unsupported dtype tag {dtype_tag} for tensor {name!r}")
        dims = reader.unpack(f"<{rank}I") if rank else ()
        numel = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = reader.take(4 * numel)
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        out[name] = torch.from_numpy(arr)
    return out


@dataclass
class Checkpoint:
    config_text: str
    params: dict[str, torch.Tensor]
    opt_state: dict[str, torch.Tensor]
    rng_state: bytes
    step: int


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    config_bytes = ckpt.config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(_encode_table(ckpt.params))
        fh.write(_encode_table(ckpt.opt_state))
        fh.write(struct.pack("<Q", len(ckpt.rng_state)))
        fh.write(ckpt.rng_state)
        fh.write(struct.pack("<Q", ckpt.step))


def load_checkpoint(path: str, expected_identity: str | None = None) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    reader = _Reader(blob)
    magic = reader.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}; not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, supported {VERSION}")
    (config_len,) = reader.unpack("<Q")
    config_text = reader.take(config_len).decode("utf-8")
    params = _decode_table(reader)
    opt_state = _decode_table(reader)
    (rng_len,) = reader.unpack("<Q")
    rng_state = reader.take(rng_len)
    (step,) = reader.unpack("<Q")
    ckpt = Checkpoint(config_text, params, opt_state, rng_state, step)
    if expected_identity is not None:
        from .config import parse_config_text

        saved = parse_config_text(config_text).identity_text()
        if config_hash(saved) != config_hash(expected_identity):
            raise CheckpointError(
                "config hash mismatch: the checkpoint was trained with a different "
                "run identity; refusing to load"
            )
    return ckpt


def save_tensor_file(path: str, tensors: dict[str, torch.Tensor]) -> None:
    """Standalone tensor dump in the checkpoint's table encoding."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(_encode_table(tensors))


def load_tensor_file(path: str) -> dict[str, torch.Tensor]:
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob)
    if reader.take(4) != MAGIC:
        raise BadMagicError("bad magic; not a tensor file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"tensor file version {version}, supported {VERSION}")
    return _decode_table(reader)
