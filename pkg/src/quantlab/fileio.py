"""On-disk formats: tensor files, token-grid files, and atomic writes.

Tensor files: magic "FSQT", u32 rank, u32 dims..., then float64 payload.
Token grids: u32 height, u32 width, then u32 tokens.
All integers little-endian.  Every writer goes through a temp-file + rename,
so a crashed or failed command never leaves a partial output behind.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .codec import TokenGrid

TENSOR_MAGIC = b"FSQT"


def atomic_write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)
    head = TENSOR_MAGIC + np.array([arr.ndim, *arr.shape], dtype="<u4").tobytes()
    return head + arr.astype("<f8").tobytes()


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 8 or blob[:4] != TENSOR_MAGIC:
        raise ValueError("not a tensor file (bad magic)")
    rank = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    if len(blob) < 8 + 4 * rank:
        raise ValueError("tensor file truncated in header")
    dims = tuple(int(d) for d in np.frombuffer(blob[8:8 + 4 * rank], dtype="<u4"))
    data = np.frombuffer(blob[8 + 4 * rank:], dtype="<f8")
    expected = int(np.prod(dims)) if dims else 1
    if data.size != expected:
        raise ValueError(f"tensor payload has {data.size} floats, expected {expected}")
    return data.reshape(dims).copy()


def write_tensor(path, arr: np.ndarray) -> None:
    atomic_write_bytes(path, tensor_to_bytes(arr))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def write_token_grid(path, grid: TokenGrid) -> None:
    atomic_write_bytes(path, grid.to_bytes())


def read_token_grid(path) -> TokenGrid:
    return TokenGrid.from_bytes(Path(path).read_bytes())
