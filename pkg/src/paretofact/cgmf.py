"""CGMF container: magic, version, JSON header, then raw float32 blobs.

Layout (all integers little-endian)::

    b"CGMF" | uint32 version | uint32 header_len | header (UTF-8 JSON) | blobs

The header carries a ``tensors`` list of ``{"name", "shape"}`` entries; each
tensor follows as a float32 little-endian blob, in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CGMF"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def encode(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    header = dict(header)
    header["tensors"] = [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()]
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(text)), text]
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(raw) < _PREFIX.size:
        raise FormatError(f"file too short for CGMF prefix ({len(raw)} bytes)", len(raw))
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    start = _PREFIX.size
    if start + hlen > len(raw):
        raise FormatError(f"header length {hlen} exceeds file size {len(raw)}", 8)
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed JSON header: {exc}", start) from None
    specs = header.get("tensors")
    if not isinstance(specs, list):
        raise FormatError("header lacks a 'tensors' list", start)
    offset = start + hlen
    expected = sum(4 * int(np.prod(s["shape"], dtype=np.int64)) for s in specs)
    actual = len(raw) - offset
    if expected != actual:
        raise FormatError(f"blob length mismatch: header declares {expected} bytes, found {actual}", offset)
    tensors: dict[str, np.ndarray] = {}
    for s in specs:
        n = int(np.prod(s["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).astype(np.float32)
        tensors[s["name"]] = arr.reshape(s["shape"])
        offset += 4 * n
    return header, tensors


def write(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(header, tensors))


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())
