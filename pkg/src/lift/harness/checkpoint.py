"""Binary checkpoints of matrices, masks and compacted optimizer states.

Layout (all integers little-endian)::

    b"LIFTCKPT"                     magic, 8 bytes
    u32  version                    currently 1
    u64  record count
    records:
      u8   kind                     1 matrix, 2 mask, 3 sparse Adam state
      u32  name length, then UTF-8 name bytes
      u64  rows, u64 cols
      kind 1: rows*cols f64         row-major payload
      kind 2: u64 k, k * u64        sorted row-major positions
      kind 3: u64 step, u64 k, k * u64 positions, k * f64 first moment,
              k * f64 second moment
    u32  CRC-32 of every preceding byte

A state record costs ``37 + len(name) + 24 k`` bytes whatever the matrix shape.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import (
    BadMagicError,
    ChecksumError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from ..masking import Mask
from ..optimizer import SparseAdamState

MAGIC = b"LIFTCKPT"
VERSION = 1
KIND_MATRIX, KIND_MASK, KIND_STATE = 1, 2, 3

_HEADER = struct.Struct("<8sIQ")
_RECORD_HEAD = struct.Struct("<BI")
_SHAPE = struct.Struct("<QQ")
_U64 = struct.Struct("<Q")
_CRC = struct.Struct("<I")


@dataclass
class Checkpoint:
    matrices: dict[str, np.ndarray] = field(default_factory=dict)
    masks: dict[str, Mask] = field(default_factory=dict)
    states: dict[str, SparseAdamState] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if self.matrices.keys() != other.matrices.keys() or self.masks != other.masks:
            return False
        if self.states.keys() != other.states.keys():
            return False
        for name, a in self.matrices.items():
            b = other.matrices[name]
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        for name, a in self.states.items():
            b = other.states[name]
            if (a.mask != b.mask or a.t != b.t or a.m.tobytes() != b.m.tobytes()
                    or a.v.tobytes() != b.v.tobytes()):
                return False
        return True


def state_record_nbytes(name: str, k: int) -> int:
    return _RECORD_HEAD.size + len(name.encode("utf-8")) + _SHAPE.size + 2 * _U64.size + 8 * k + 2 * 8 * k


def _record_head(kind: int, name: str, rows: int, cols: int) -> bytes:
    raw = name.encode("utf-8")
    return _RECORD_HEAD.pack(kind, len(raw)) + raw + _SHAPE.pack(rows, cols)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(ckpt.matrices) + len(ckpt.masks) + len(ckpt.states))]
    for name, w in ckpt.matrices.items():
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"matrix {name!r} must be 2-D")
        parts.append(_record_head(KIND_MATRIX, name, *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    for name, mask in ckpt.masks.items():
        parts.append(_record_head(KIND_MASK, name, mask.rows, mask.cols))
        parts.append(_U64.pack(mask.k))
        parts.append(mask.positions.astype("<u8").tobytes())
    for name, state in ckpt.states.items():
        mask = state.mask
        parts.append(_record_head(KIND_STATE, name, mask.rows, mask.cols))
        parts.append(_U64.pack(state.t) + _U64.pack(mask.k))
        parts.append(mask.positions.astype("<u8").tobytes())
        parts.append(np.asarray(state.m, dtype="<f8").tobytes())
        parts.append(np.asarray(state.v, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, end: int):
        self.buf = buf
        self.pos = 0
        self.end = end

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise TruncatedCheckpointError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, {self.end - self.pos} left"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def array(self, n: int, dtype: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype=dtype).astype(dtype[1:], copy=True)


def _parse(buf: bytes) -> Checkpoint:
    reader = _Reader(buf, len(buf) - _CRC.size)
    _, _, count = reader.unpack(_HEADER)
    ckpt = Checkpoint()
    for _ in range(count):
        kind, name_len = reader.unpack(_RECORD_HEAD)
        name = reader.take(name_len).decode("utf-8")
        rows, cols = reader.unpack(_SHAPE)
        if kind == KIND_MATRIX:
            ckpt.matrices[name] = reader.array(rows * cols, "<f8").reshape(rows, cols)
        elif kind == KIND_MASK:
            (k,) = reader.unpack(_U64)
            ckpt.masks[name] = Mask(rows, cols, reader.array(k, "<u8").astype(np.int64))
        elif kind == KIND_STATE:
            t, k = reader.unpack(_U64)[0], reader.unpack(_U64)[0]
            mask = Mask(rows, cols, reader.array(k, "<u8").astype(np.int64))
            m = reader.array(k, "<f8")
            v = reader.array(k, "<f8")
            ckpt.states[name] = SparseAdamState(mask, m, v, int(t))
        else:
            raise ChecksumError(f"unknown record kind {kind}")
    if reader.pos != reader.end:
        raise ChecksumError(f"{reader.end - reader.pos} unexpected trailing bytes")
    return ckpt


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < _HEADER.size + _CRC.size:
        if not MAGIC.startswith(buf[: len(MAGIC)]):
            raise BadMagicError("not a LIFT checkpoint (bad magic bytes)")
        raise TruncatedCheckpointError(f"checkpoint truncated: only {len(buf)} bytes")
    magic, version, _ = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError("not a LIFT checkpoint (bad magic bytes)")
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    (stored,) = _CRC.unpack_from(buf, len(buf) - _CRC.size)
    if zlib.crc32(buf[: len(buf) - _CRC.size]) != stored:
        # A short file fails the structural parse first; anything else is corruption.
        try:
            _parse(buf)
        except TruncatedCheckpointError:
            raise
        except Exception:
            pass
        raise ChecksumError("checkpoint checksum mismatch")
    return _parse(buf)


def save_checkpoint(path, ckpt: Checkpoint) -> int:
    data = encode_checkpoint(ckpt)
    Path(path).write_bytes(data)
    return len(data)


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
