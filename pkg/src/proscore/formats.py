"""Binary serialization helpers shared by all model/file formats.

Every format starts with a 4-byte ASCII magic and a u32 version. All
integers are unsigned 32-bit little-endian, all reals are 64-bit IEEE-754
little-endian. Matrices are row-major. Serialization is canonical: writing
what was just read reproduces the bytes exactly.
"""

from __future__ import annotations

import struct
from io import BytesIO
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """Raised when a binary file does not match its declared format."""


def write_magic(f: BinaryIO, magic: str, version: int = 1) -> None:
    f.write(magic.encode("ascii"))
    write_u32(f, version)


def read_magic(f: BinaryIO, magic: str, path: str = "<stream>") -> int:
    got = f.read(4)
    if got != magic.encode("ascii"):
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    return read_u32(f)


def write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def read_u32(f: BinaryIO) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError("truncated file while reading u32")
    return struct.unpack("<I", raw)[0]


def write_u64(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<Q", value))


def read_u64(f: BinaryIO) -> int:
    raw = f.read(8)
    if len(raw) != 8:
        raise FormatError("truncated file while reading u64")
    return struct.unpack("<Q", raw)[0]


def write_f64(f: BinaryIO, value: float) -> None:
    f.write(struct.pack("<d", float(value)))


def read_f64(f: BinaryIO) -> float:
    raw = f.read(8)
    if len(raw) != 8:
        raise FormatError("truncated file while reading f64")
    return struct.unpack("<d", raw)[0]


def write_array(f: BinaryIO, arr: np.ndarray) -> None:
    """Write the raw payload of an array (shape must be known to the reader)."""
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_array(f: BinaryIO, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = f.read(8 * count)
    if len(raw) != 8 * count:
        raise FormatError("truncated file while reading array payload")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def write_matrix(f: BinaryIO, mat: np.ndarray) -> None:
    """u32 rows, u32 cols, then the row-major payload."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise FormatError(f"expected a 2-D matrix, got shape {mat.shape}")
    write_u32(f, mat.shape[0])
    write_u32(f, mat.shape[1])
    write_array(f, mat)


def read_matrix(f: BinaryIO) -> np.ndarray:
    rows = read_u32(f)
    cols = read_u32(f)
    return read_array(f, (rows, cols))


def write_string(f: BinaryIO, s: str) -> None:
    data = s.encode("utf-8")
    write_u32(f, len(data))
    f.write(data)


def read_string(f: BinaryIO) -> str:
    n = read_u32(f)
    raw = f.read(n)
    if len(raw) != n:
        raise FormatError("truncated file while reading string")
    return raw.decode("utf-8")


def write_blob(f: BinaryIO, payload: bytes) -> None:
    write_u64(f, len(payload))
    f.write(payload)


def read_blob(f: BinaryIO) -> bytes:
    n = read_u64(f)
    raw = f.read(n)
    if len(raw) != n:
        raise FormatError("truncated file while reading blob")
    return raw


def to_bytes(writer, *args) -> bytes:
    """Run a file-writing function against an in-memory buffer."""
    buf = BytesIO()
    writer(buf, *args)
    return buf.getvalue()


def expect_eof(f: BinaryIO, path: str = "<stream>") -> None:
    if f.read(1):
        raise FormatError(f"{path}: trailing bytes after payload")
