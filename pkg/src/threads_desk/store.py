"""Binary embedding store: a fixed header plus row-major little-endian f32 payload.

Layout::

    magic   4 bytes  b"THDS"
    version u32 LE   (currently 1)
    count   u64 LE
    dim     u32 LE
    payload count * dim * f32 LE

A JSON sidecar (``<file>.json``) carries ``ids`` and optionally ``labels``,
``patients`` and ``survival``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"THDS"
VERSION = 1
HEADER = struct.Struct("<4sIQI")


class StoreFormatError(ValueError):
    """Malformed store file (wrong magic, size or sidecar)."""


class StoreVersionError(StoreFormatError):
    """Store written with an unsupported format version."""


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def write_store(path, matrix, sidecar: dict) -> None:
    m = np.ascontiguousarray(np.asarray(matrix), dtype="<f4")
    if m.ndim != 2:
        raise StoreFormatError(f"store payload must be 2-d, got shape {m.shape}")
    ids = sidecar.get("ids")
    if ids is None or len(ids) != m.shape[0]:
        raise StoreFormatError(f"sidecar needs one id per row ({m.shape[0]} rows)")
    for key in ("labels", "patients", "survival"):
        if key in sidecar and sidecar[key] is not None and len(sidecar[key]) != m.shape[0]:
            raise StoreFormatError(f"sidecar field {key!r} has {len(sidecar[key])} entries, expected {m.shape[0]}")
    atomic_write_bytes(path, HEADER.pack(MAGIC, VERSION, m.shape[0], m.shape[1]) + m.tobytes())
    atomic_write_text(sidecar_path(path), json.dumps(sidecar, sort_keys=True))


def read_store(path) -> tuple[np.ndarray, dict]:
    """Return the float32 payload (count x dim) and the sidecar dict."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such store")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise StoreFormatError(f"{path}: truncated header")
    magic, version, count, dim = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise StoreFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise StoreVersionError(f"{path}: unsupported store version {version}")
    expected = HEADER.size + 4 * count * dim
    if len(raw) != expected:
        raise StoreFormatError(f"{path}: size {len(raw)} bytes, header implies {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(count, dim).copy()
    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"{side}: sidecar missing")
    meta = json.loads(side.read_text())
    if len(meta.get("ids", [])) != count:
        raise StoreFormatError(f"{side}: field 'ids' has {len(meta.get('ids', []))} entries, header count {count}")
    return data, meta
