"""Binary tensor container with a text manifest entry.

Layout, all little-endian:

    magic ``LDON`` | u16 version=1 | u16 flags=0 | u32 entry count
    per entry: u16 name length | ascii name | u8 dtype | u8 rank |
               rank x u64 extents | raw payload (row-major)
    trailing u32 CRC32 over every preceding byte

dtype codes: 0 = float64, 1 = uint8. The manifest travels as a uint8 entry
named ``__manifest`` holding ``key = value`` lines. Writes go through a
temp file and an atomic rename so readers never observe partial files.
"""
from __future__ import annotations

import os
import struct
import zlib

import numpy as np

MAGIC = b"LDON"
VERSION = 1
MANIFEST_NAME = "__manifest"
MAX_NAME_LEN = 64
MAX_TENSOR_RANK = 4

_DTYPE_F64 = 0
_DTYPE_U8 = 1


class ContainerError(Exception):
    """Malformed container; messages carry the failing byte offset."""


def _encode_manifest(manifest: dict) -> bytes:
    lines = []
    for key in sorted(manifest):
        value = str(manifest[key])
        if "=" in key or "\n" in key or not key:
            raise ValueError(f"invalid manifest key {key!r}")
        if "\n" in value:
            raise ValueError(f"manifest value for '{key}' must be single-line")
        lines.append(f"{key} = {value}\n")
    return "".join(lines).encode("utf-8")


def _decode_manifest(payload: bytes) -> dict:
    out = {}
    for lineno, line in enumerate(payload.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if " = " not in line:
            raise ContainerError(f"manifest line {lineno} is not 'key = value': {line!r}")
        key, value = line.split(" = ", 1)
        out[key] = value
    return out


def _check_name(name: str):
    if not name or len(name) > MAX_NAME_LEN:
        raise ValueError(f"entry name must be 1..{MAX_NAME_LEN} chars, got {name!r}")
    try:
        name.encode("ascii")
    except UnicodeEncodeError:
        raise ValueError(f"entry name must be ascii, got {name!r}") from None


def write_container(path, tensors: dict, manifest: dict | None = None):
    """Serialize float64 arrays plus a manifest; atomic on POSIX renames."""
    entries = [(MANIFEST_NAME, np.frombuffer(_encode_manifest(manifest or {}), dtype=np.uint8))]
    for name, arr in tensors.items():
        _check_name(name)
        if name == MANIFEST_NAME:
            raise ValueError(f"'{MANIFEST_NAME}' is reserved for the manifest entry")
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if arr.ndim > MAX_TENSOR_RANK:
            raise ValueError(f"tensor '{name}' has rank {arr.ndim}, above the cap {MAX_TENSOR_RANK}")
        entries.append((name, arr))
    if len(set(n for n, _ in entries)) != len(entries):
        raise ValueError("duplicate tensor names")

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<HHI", VERSION, 0, len(entries))
    for name, arr in entries:
        code = _DTYPE_U8 if arr.dtype == np.uint8 else _DTYPE_F64
        encoded = name.encode("ascii")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<BB", code, arr.ndim)
        for extent in arr.shape:
            blob += struct.pack("<Q", extent)
        if code == _DTYPE_F64:
            arr = arr.astype("<f8", copy=False)
        blob += arr.tobytes(order="C")
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)

    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read_container(path):
    """Read back (tensors, manifest). Raises ContainerError with offsets."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, count, what):
        if offset + count > len(blob):
            raise ContainerError(f"truncated container: {what} at offset {offset} needs {count} bytes")
        return blob[offset : offset + count]

    if need(0, 4, "magic") != MAGIC:
        raise ContainerError(f"bad magic at offset 0: {blob[:4]!r}")
    version, flags, count = struct.unpack("<HHI", need(4, 8, "header"))
    if version != VERSION:
        raise ContainerError(f"unsupported version {version} at offset 4")
    if flags != 0:
        raise ContainerError(f"unsupported flags {flags} at offset 6")

    stored_crc = struct.unpack("<I", need(len(blob) - 4, 4, "crc"))[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ContainerError(
            f"crc mismatch at offset {len(blob) - 4}: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )

    pos = 12
    tensors: dict[str, np.ndarray] = {}
    manifest: dict = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", need(pos, 2, "name length"))
        pos += 2
        name = need(pos, name_len, "name").decode("ascii")
        pos += name_len
        code, rank = struct.unpack("<BB", need(pos, 2, "dtype/rank"))
        pos += 2
        if code not in (_DTYPE_F64, _DTYPE_U8):
            raise ContainerError(f"unknown dtype code {code} for '{name}' at offset {pos - 2}")
        shape = []
        for _ in range(rank):
            (extent,) = struct.unpack("<Q", need(pos, 8, "extent"))
            shape.append(extent)
            pos += 8
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        itemsize = 8 if code == _DTYPE_F64 else 1
        raw = need(pos, size * itemsize, f"payload of '{name}'")
        pos += size * itemsize
        dtype = "<f8" if code == _DTYPE_F64 else np.uint8
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if name in tensors or (name == MANIFEST_NAME and manifest):
            raise ContainerError(f"duplicate entry name '{name}'")
        if name == MANIFEST_NAME:
            manifest = _decode_manifest(raw)
        else:
            tensors[name] = arr
    if pos != len(blob) - 4:
        raise ContainerError(f"trailing bytes after last entry at offset {pos}")
    return tensors, manifest
