"""Binary tensor files.

Layout, all little-endian:

    bytes 0..3   magic b"MUST"
    bytes 4..7   format version, u32 (currently 1)
    byte  8      dtype code, u8 (0 = float64, the only one defined)
    byte  9      rank, u8
    then         rank * u64 dimension sizes
    then         row-major float64 payload

The format exists so checkpoints and fixtures are byte-stable across
runs; everything that lands on disk goes through these two functions.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"MUST"
VERSION = 1
DTYPE_F64 = 0


def save_tensor(path, arr) -> None:
    # order="C" forces contiguity; ascontiguousarray would do the same
    # but silently promotes rank-0 arrays to rank 1
    arr = np.asarray(arr, dtype=np.float64, order="C")
    if arr.ndim > 255:
        raise ContractError("rank does not fit in u8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<BB", DTYPE_F64, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 10:
        raise ContractError(f"{path}: truncated header")
    if blob[:4] != MAGIC:
        raise ContractError(f"{path}: bad magic {blob[:4]!r}")
    version, = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ContractError(f"{path}: unsupported version {version}")
    dtype_code, rank = struct.unpack_from("<BB", blob, 8)
    if dtype_code != DTYPE_F64:
        raise ContractError(f"{path}: unknown dtype code {dtype_code}")
    off = 10
    if len(blob) < off + 8 * rank:
        raise ContractError(f"{path}: truncated shape")
    shape = struct.unpack_from(f"<{rank}Q", blob, off)
    off += 8 * rank
    n = 1
    for s in shape:
        n *= s
    if len(blob) != off + 8 * n:
        raise ContractError(
            f"{path}: payload is {len(blob) - off} bytes, shape {shape} needs {8 * n}")
    arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
    return arr.reshape(shape).astype(np.float64, copy=True)
