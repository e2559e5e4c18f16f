"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic            8 bytes   b"MMNERCKP"
    format_version   uint32
    header_len       uint32
    header           header_len bytes, UTF-8 JSON object with at least
                     "model_kind" and "config_hash"
    n_tensors        uint32
    n_tensors times:
        name_len     uint32
        name         name_len bytes, UTF-8 dotted parameter path
        ndim         uint32
        dims         ndim x uint64
        values       prod(dims) x float64, row-major
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import VersionError

MAGIC = b"MMNERCKP"
FORMAT_VERSION = 1


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, tensors: dict, header: dict):
    if "model_kind" not in header or "config_hash" not in header:
        raise ValueError("header needs model_kind and config_hash")
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(hdr)))
        fh.write(hdr)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.array(arr, dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    """Return ``(header, tensors)``; raises VersionError on a foreign file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise VersionError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        return _read_body(blob, hlen)
    except (struct.error, ValueError, UnicodeDecodeError) as err:
        raise VersionError(f"{path}: truncated or corrupt checkpoint ({err})") from None


def _read_body(blob: bytes, hlen: int):
    off = 16
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims).astype(np.float64)
        off += 8 * n
        tensors[name] = arr
    return header, tensors
