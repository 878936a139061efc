"""Little-endian binary tensor records.

Layout of one record::

    b"SLCT"            4-byte magic
    u32 rank
    u64 extent * rank
    f64 payload        product(extents) values, row-major

Several records may be concatenated in one file (checkpoints do this).
"""

from __future__ import annotations

import struct
from typing import BinaryIO, List

import numpy as np

from .tensor import Tensor

MAGIC = b"SLCT"


class CorruptTensorFile(ValueError):
    """Raised when a record cannot be decoded; carries the byte offset."""

    def __init__(self, message: str, offset: int, path: str = "<stream>"):
        super().__init__(f"{path}: offset {offset}: {message}")
        self.offset = offset
        self.path = path


def encode_tensor(t) -> bytes:
    arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f8", order="C")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def decode_tensor(buf: bytes, offset: int = 0, path: str = "<stream>") -> tuple:
    """Decode one record at ``offset``; returns ``(array, next_offset)``."""
    if buf[offset : offset + 4] != MAGIC:
        raise CorruptTensorFile("bad magic (expected b'SLCT')", offset, path)
    if len(buf) < offset + 8:
        raise CorruptTensorFile("truncated header", offset, path)
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    pos = offset + 8
    if rank > 32 or len(buf) < pos + 8 * rank:
        raise CorruptTensorFile(f"implausible or truncated rank {rank}", offset + 4, path)
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    if len(buf) < pos + 8 * count:
        raise CorruptTensorFile(f"payload truncated: need {8 * count} bytes for shape {shape}", pos, path)
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
    return arr, pos + 8 * count


def save_tensors(path, tensors) -> None:
    with open(path, "wb") as fh:
        for t in tensors:
            fh.write(encode_tensor(t))


def load_tensors(path) -> List[np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    out, pos = [], 0
    while pos < len(buf):
        arr, pos = decode_tensor(buf, pos, str(path))
        out.append(arr)
    return out


def write_tensor(fh: BinaryIO, t) -> None:
    fh.write(encode_tensor(t))
