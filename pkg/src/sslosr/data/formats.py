"""Readers and writers for the on-disk sample formats.

Three layouts are understood:

* CIFAR binary batches: fixed-size records of ``label_bytes`` label bytes
  followed by 3072 pixel bytes (3x32x32, channel-major).
* IDX (the MNIST container): big-endian header ``00 00 <type> <ndim>``
  followed by ``ndim`` uint32 dimensions and a row-major payload.
* raw tensor: little-endian header ``b"SSLT"``, uint8 dtype code, uint8
  rank, ``rank`` uint64 dimensions, then a row-major payload.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

from sslosr.errors import FormatError, UnsupportedFormatError

RAW_MAGIC = b"SSLT"

RAW_DTYPES: dict[int, np.dtype] = {
    1: np.dtype("<u1"),
    2: np.dtype("<i4"),
    3: np.dtype("<i8"),
    4: np.dtype("<f4"),
    5: np.dtype("<f8"),
}
_RAW_CODES = {dt: code for code, dt in RAW_DTYPES.items()}

IDX_DTYPES: dict[int, np.dtype] = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

CIFAR_PIXELS = 3 * 32 * 32


def raw_tensor_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    kind = "u" if array.dtype.kind == "b" else array.dtype.kind
    code = _RAW_CODES.get(np.dtype(f"<{kind}{array.dtype.itemsize}"))
    if code is None:
        raise UnsupportedFormatError(f"dtype {array.dtype} has no raw-tensor code")
    if array.ndim > 255:
        raise UnsupportedFormatError("raw tensors support rank <= 255")
    header = RAW_MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + np.ascontiguousarray(array, dtype=RAW_DTYPES[code]).tobytes()


def parse_raw_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 6:
        raise FormatError("truncated raw-tensor header", offset=len(buf))
    if buf[:4] != RAW_MAGIC:
        raise UnsupportedFormatError(f"unknown raw-tensor magic {buf[:4]!r}")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in RAW_DTYPES:
        raise UnsupportedFormatError(f"unknown raw-tensor dtype code {code}")
    header_end = 6 + 8 * rank
    if len(buf) < header_end:
        raise FormatError("truncated raw-tensor dimensions", offset=len(buf))
    dims = struct.unpack_from(f"<{rank}Q", buf, 6)
    dtype = RAW_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = header_end + count * dtype.itemsize
    if len(buf) < expected:
        raise FormatError(
            f"raw-tensor payload truncated: expected {expected} bytes, got {len(buf)}",
            offset=len(buf),
        )
    if len(buf) > expected:
        raise FormatError("trailing bytes after raw-tensor payload", offset=expected)
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=header_end)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def write_raw_tensor(path: str | os.PathLike, array: np.ndarray) -> str:
    """Write ``array`` and return the sha256 hex digest of the written bytes."""
    payload = raw_tensor_bytes(array)
    Path(path).write_bytes(payload)
    return hashlib.sha256(payload).hexdigest()


def read_raw_tensor(path: str | os.PathLike) -> np.ndarray:
    return parse_raw_tensor(Path(path).read_bytes())


def parse_idx(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise FormatError("truncated IDX header", offset=len(buf))
    zero, type_code, ndim = struct.unpack_from(">HBB", buf, 0)
    if zero != 0 or type_code not in IDX_DTYPES:
        raise UnsupportedFormatError(f"unknown IDX magic {buf[:4].hex()}")
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise FormatError("truncated IDX dimensions", offset=len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    dtype = IDX_DTYPES[type_code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = header_end + count * dtype.itemsize
    if len(buf) < expected:
        raise FormatError(
            f"IDX payload truncated: expected {expected} bytes, got {len(buf)}",
            offset=len(buf),
        )
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=header_end)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def idx_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    codes = {np.dtype(dt).newbyteorder("="): c for c, dt in IDX_DTYPES.items()}
    code = codes.get(array.dtype.newbyteorder("="))
    if code is None:
        raise UnsupportedFormatError(f"dtype {array.dtype} has no IDX code")
    header = struct.pack(">HBB", 0, code, array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.astype(IDX_DTYPES[code]).tobytes()


def parse_cifar(buf: bytes, label_bytes: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(pixels [N,3,32,32] uint8, labels [N])``.

    With ``label_bytes=2`` (CIFAR-100) the fine label, the second byte, is kept.
    """
    record = label_bytes + CIFAR_PIXELS
    n, rest = divmod(len(buf), record)
    if rest:
        raise FormatError(
            f"CIFAR file ends inside record {n} ({rest} of {record} bytes present)",
            offset=n * record,
        )
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(n, record)
    labels = raw[:, label_bytes - 1].astype(np.int64)
    pixels = raw[:, label_bytes:].reshape(n, 3, 32, 32).copy()
    return pixels, labels


def cifar_bytes(pixels: np.ndarray, labels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(pixels), CIFAR_PIXELS)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    return np.concatenate([labels, pixels], axis=1).tobytes()
