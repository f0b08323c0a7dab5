"""
MTX1 tensor files: b"MTX1", u32 LE rows, u32 LE cols, rows*cols f64 LE values, row-major.
"""
import struct
from pathlib import Path

import numpy as np

from nn.errors import CheckpointError
from nn.linalg import as_matrix

MAGIC = b"MTX1"
_HEADER = struct.Struct("<4sII")


def encode_mtx(m: np.ndarray) -> bytes:
    """Header plus little-endian f64 payload, row-major."""
    m = as_matrix(m)
    rows, cols = m.shape
    return _HEADER.pack(MAGIC, rows, cols) + np.ascontiguousarray(m, dtype="<f8").tobytes()


def decode_mtx(payload: bytes, source: str = "<bytes>") -> np.ndarray:
    """
    Validates header, size and finiteness; `source` names the payload in errors.
    """
    # 1. Header
    if len(payload) < _HEADER.size:
        raise CheckpointError("truncated MTX1 header", source)
    magic, rows, cols = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise CheckpointError(f"not an MTX1 payload (magic {magic!r})", source)
    # 2. Payload size must match the header exactly
    expected = _HEADER.size + 8 * rows * cols
    if len(payload) != expected:
        raise CheckpointError(f"expected {expected} bytes for {rows}x{cols}, found {len(payload)}", source)
    if rows == 0 or cols == 0:
        raise CheckpointError(f"empty {rows}x{cols} matrix", source)
    # 3. Values
    values = np.frombuffer(payload, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    m = values.reshape(rows, cols)
    if not np.all(np.isfinite(m)):
        raise CheckpointError("non-finite entries", source)
    return m


def write_mtx(path: Path | str, m: np.ndarray) -> None:
    Path(path).write_bytes(encode_mtx(m))


def read_mtx(path: Path | str) -> np.ndarray:
    """Reads one tensor file; every failure is a CheckpointError naming the path."""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read tensor file ({e.strerror})", str(path)) from e
    return decode_mtx(payload, str(path))
