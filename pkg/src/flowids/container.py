"""Versioned, checksummed binary container used for artifacts and checkpoints.

Layout::

    FLOWIDS <kind>\\n
    version <n>\\n
    manifest <byte length>\\n
    <manifest: JSON, sorted keys, ASCII>
    <array sections: little-endian, in manifest order>
    <sha256 of everything above, 32 raw bytes>

The manifest holds free-form metadata under ``meta`` and, for every array, its
name, dtype (``<f8`` or ``<i8``), shape and byte offset into the section area.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .errors import ChecksumMismatch, Truncated, UnknownVersion

MAGIC = b"FLOWIDS"
VERSION = 1
_DIGEST = 32
_DTYPES = {"<f8": np.float64, "<i8": np.int64}


def _dtype_tag(a: np.ndarray) -> str:
    if np.issubdtype(a.dtype, np.integer) or a.dtype == np.bool_:
        return "<i8"
    return "<f8"


def pack(kind: str, meta: Mapping, arrays: Mapping[str, np.ndarray]) -> bytes:
    """Serialize metadata plus named arrays; identical inputs give identical bytes."""
    entries, blobs, offset = [], [], 0
    for name, value in arrays.items():
        a = np.asarray(value)
        tag = _dtype_tag(a)
        raw = np.ascontiguousarray(a, dtype=tag).tobytes()
        entries.append({"name": name, "dtype": tag, "shape": list(a.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True,
                          separators=(",", ":"), allow_nan=False).encode("ascii")
    body = b"".join([MAGIC, b" ", kind.encode("ascii"), b"\n",
                     f"version {VERSION}\n".encode(), f"manifest {len(manifest)}\n".encode(),
                     manifest, *blobs])
    return body + hashlib.sha256(body).digest()


def _read_line(data: bytes, pos: int) -> tuple[bytes, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise Truncated("header ends early")
    return data[pos:end], end + 1


def unpack(data: bytes, expected_kind: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Inverse of :func:`pack`: returns (kind, meta, arrays).

    Raises UnknownVersion for a foreign file or unsupported version, Truncated
    when bytes are missing and ChecksumMismatch for any other corruption.
    """
    if not data.startswith(MAGIC[: len(data)]):
        raise UnknownVersion("not a flowids container")
    line, pos = _read_line(data, 0)
    if not line.startswith(MAGIC + b" "):
        raise UnknownVersion("not a flowids container")
    kind = line[len(MAGIC) + 1:].decode("ascii", "replace")
    if expected_kind is not None and kind != expected_kind:
        raise UnknownVersion(f"expected a {expected_kind!r} container, found {kind!r}")
    line, pos = _read_line(data, pos)
    try:
        word, number = line.split(b" ")
        version = int(number)
        if word != b"version":
            raise ValueError
    except ValueError:
        raise ChecksumMismatch("malformed version line") from None
    if version != VERSION:
        raise UnknownVersion(f"container version {version} (supported: {VERSION})")
    line, pos = _read_line(data, pos)
    try:
        word, number = line.split(b" ")
        size = int(number)
        if word != b"manifest" or size < 0:
            raise ValueError
    except ValueError:
        raise ChecksumMismatch("malformed manifest line") from None
    if len(data) < pos + size:
        raise Truncated("manifest ends early")
    try:
        manifest = json.loads(data[pos:pos + size].decode("ascii"))
        entries = manifest["arrays"]
        lengths = [int(np.prod(e["shape"], dtype=np.int64)) * 8 for e in entries]
    except (ValueError, KeyError, TypeError):
        raise ChecksumMismatch("manifest is corrupt") from None
    start = pos + size
    expected = start + sum(lengths) + _DIGEST
    if len(data) < expected:
        raise Truncated(f"{len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise ChecksumMismatch(f"{len(data) - expected} unexpected trailing bytes")
    body = data[:-_DIGEST]
    if hashlib.sha256(body).digest() != data[-_DIGEST:]:
        raise ChecksumMismatch("sha256 of the payload does not match")
    arrays = {}
    for e, n in zip(entries, lengths):
        off = start + int(e["offset"])
        arrays[e["name"]] = np.frombuffer(data[off:off + n], dtype=e["dtype"]).reshape(e["shape"]).astype(
            _DTYPES[e["dtype"]])
    return kind, manifest["meta"], arrays


def write(path: str | Path | BinaryIO, payload: bytes) -> None:
    if hasattr(path, "write"):
        path.write(payload)
    else:
        Path(path).write_bytes(payload)


def read(source: str | Path | BinaryIO | bytes) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if hasattr(source, "read"):
        return source.read()
    return Path(source).read_bytes()
