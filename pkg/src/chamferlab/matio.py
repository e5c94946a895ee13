"""Binary matrix persistence.

Format: magic b"CHLM", u32 version=1, u64 rows, u64 cols, then
rows*cols little-endian float64 values in row-major order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CHLM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class MatrixIOError(Exception):
    pass


def save_matrix(path, a) -> None:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise MatrixIOError(f"expected a 2-D array, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise MatrixIOError("refusing to write non-finite values")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1]))
        f.write(a.astype("<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise MatrixIOError(f"{path}: truncated header")
        magic, version, rows, cols = _HEADER.unpack(header)
        if magic != MAGIC:
            raise MatrixIOError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise MatrixIOError(f"{path}: unsupported version {version}")
        payload = f.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise MatrixIOError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


def save_manifest(path, manifest: dict) -> None:
    """Sidecar manifest as JSON with stable key order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
