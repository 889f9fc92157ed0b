"""Binary file formats.

TSTN (one tensor)::

    magic "TSTN" | u32 version=1 | u32 T, C, H, W | u8 dtype (0 = f32) | payload

TSCK (checkpoint)::

    magic "TSCK" | u32 version=1 | u32 array count
    per array: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 payload
    u64 metadata length | UTF-8 JSON metadata

All integers and floats are little-endian; payloads are row-major.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

TSTN_MAGIC = b"TSTN"
TSCK_MAGIC = b"TSCK"
VERSION = 1
DTYPE_F32 = 0
_F32 = np.dtype("<f4")


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tstn(array) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    if arr.ndim != 4:
        raise FormatError(f"TSTN stores rank-4 [T,C,H,W] tensors, got shape {arr.shape}")
    header = TSTN_MAGIC + struct.pack("<5I", VERSION, *arr.shape) + struct.pack("<B", DTYPE_F32)
    return header + np.ascontiguousarray(arr, dtype=_F32).tobytes()


def decode_tstn(buf: bytes) -> np.ndarray:
    if len(buf) < 25:
        raise FormatError(f"TSTN header truncated ({len(buf)} bytes)")
    if buf[:4] != TSTN_MAGIC:
        raise FormatError(f"bad TSTN magic {buf[:4]!r}")
    version, T, C, H, W = struct.unpack_from("<5I", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported TSTN version {version}")
    (dtype,) = struct.unpack_from("<B", buf, 24)
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported TSTN dtype code {dtype}")
    dims = (T, C, H, W)
    if min(dims) < 1:
        raise FormatError(f"TSTN dims must be positive, got {dims}")
    n = T * C * H * W
    if len(buf) - 25 != 4 * n:
        raise FormatError(f"TSTN payload has {len(buf) - 25} bytes, dims {dims} need {4 * n}")
    return np.frombuffer(buf, dtype=_F32, count=n, offset=25).astype(np.float32).reshape(dims)


def write_tstn(path, array) -> None:
    _atomic_write(path, encode_tstn(array))


def read_tstn(path) -> np.ndarray:
    return decode_tstn(Path(path).read_bytes())


def encode_tsck(arrays: dict, metadata: dict) -> bytes:
    parts = [TSCK_MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_F32).tobytes())
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<Q", len(meta)) + meta)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_tsck(buf: bytes) -> tuple[dict, dict]:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != TSCK_MAGIC:
        raise FormatError(f"bad TSCK magic {magic!r}")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"unsupported TSCK version {version}")
    arrays = {}
    for i in range(count):
        (nlen,) = r.unpack("<H", f"name length of array {i}")
        try:
            name = r.take(nlen, f"name of array {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"array {i} name is not UTF-8") from exc
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(4 * n, f"payload of {name}")
        if name in arrays:
            raise FormatError(f"duplicate array name {name!r}")
        arrays[name] = np.frombuffer(payload, dtype=_F32).astype(np.float32).reshape(dims)
    (mlen,) = r.unpack("<Q", "metadata length")
    raw = r.take(mlen, "metadata")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after metadata")
    try:
        metadata = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint metadata is not valid JSON: {exc}") from exc
    return arrays, metadata


def write_tsck(path, arrays: dict, metadata: dict) -> None:
    _atomic_write(path, encode_tsck(arrays, metadata))


def read_tsck(path) -> tuple[dict, dict]:
    return decode_tsck(Path(path).read_bytes())
