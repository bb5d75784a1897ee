"""Versioned binary container used for datasets, checkpoints and attack sets.

Layout::

    magic (8 bytes) | version (uint32 LE) | header length (uint64 LE)
    | header (UTF-8 JSON) | raw array blocks | SHA-256 of everything before it

The header lists every array block with dtype, shape, offset and size, plus
an arbitrary JSON ``meta`` mapping.  Headers are written with sorted keys so
that identical inputs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

_PREFIX = struct.Struct("<8sIQ")
_DIGEST_SIZE = 32


def write_container(path, magic: bytes, version: int, meta: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    blocks = []
    index = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blocks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(magic, version, len(header)) + header + b"".join(blocks)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def read_container(path, magic: bytes, max_version: int) -> tuple[int, dict, dict[str, np.ndarray]]:
    """Read a container, returning ``(version, meta, arrays)``.

    Raises:
        FormatError: on wrong magic, unsupported version, truncation or a
            checksum mismatch.
        OSError: when the file cannot be read.
    """
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size + _DIGEST_SIZE:
        raise FormatError(f"{path}: file truncated ({len(data)} bytes)")
    got_magic, version, header_len = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version > max_version or version < 1:
        raise FormatError(f"{path}: unsupported format version {version} "
                          f"(this build reads up to version {max_version})")
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError(f"{path}: checksum mismatch (truncated or corrupted)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    payload = memoryview(body)[start + header_len:]
    arrays = {}
    for entry in header["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise FormatError(f"{path}: array block {entry['name']!r} out of range")
        arr = np.frombuffer(payload[lo:hi], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return version, header["meta"], arrays
