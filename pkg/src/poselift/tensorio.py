"""Shared binary tensor format and atomic file writing.

Layout: 8 magic bytes "PLTENSR1", rank as unsigned 32-bit little-endian,
rank dimensions as unsigned 64-bit little-endian, then the payload as
row-major 32-bit little-endian floats. Arrays are float64 in memory and
float32 on disk, so writing quantizes once; read-write-read is bit-exact.

All writes in the package go through the atomic helpers (temp file plus
rename) so readers never observe partial files.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

TENSOR_MAGIC = b"PLTENSR1"
MAX_RANK = 8


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def tensor_to_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.ndim < 1 or array.ndim > MAX_RANK:
        raise InputError(f"tensor rank must be 1..{MAX_RANK}, got {array.ndim}")
    header = TENSOR_MAGIC + struct.pack("<I", array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    return header + payload


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    atomic_write_bytes(path, tensor_to_bytes(array))


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor file back as float64."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read tensor file {path}: {exc}") from None
    if len(blob) < len(TENSOR_MAGIC) + 4 or blob[: len(TENSOR_MAGIC)] != TENSOR_MAGIC:
        raise FormatError(f"{path}: not a tensor file (bad magic)")
    offset = len(TENSOR_MAGIC)
    (rank,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if rank < 1 or rank > MAX_RANK:
        raise FormatError(f"{path}: invalid rank {rank}")
    if len(blob) < offset + 8 * rank:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack_from(f"<{rank}Q", blob, offset)
    offset += 8 * rank
    count = int(np.prod(dims, dtype=np.uint64)) if rank else 0
    expected = offset + 4 * count
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob) - offset} bytes, expected {4 * count}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return data.astype(np.float64).reshape(dims)
