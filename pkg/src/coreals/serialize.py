"""Binary and CSV containers for dense matrices (factor matrices, ground truth).

Binary layout, little-endian: magic ``CAMX`` (4 bytes), version uint32,
n_rows uint64, n_cols uint64, then row-major float64 payload.
"""

import csv
import struct

import numpy as np

from .errors import DataError

MAGIC = b"CAMX"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def write_matrix(path, arr):
    """Write a 2-d float array to the binary container."""
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError("write_matrix expects a 2-d array")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]))
        if np.little_endian:
            fh.write(arr.tobytes())
        else:
            fh.write(arr.astype("<f8").tobytes())


def read_matrix(path):
    """Read a matrix written by :func:`write_matrix`."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, version, n_rows, n_cols = _HEADER.unpack(head)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise DataError(f"{path}: unsupported container version {version}")
        payload = fh.read(8 * n_rows * n_cols)
    if len(payload) != 8 * n_rows * n_cols:
        raise DataError(f"{path}: truncated payload")
    arr = np.frombuffer(payload, dtype="<f8").reshape(n_rows, n_cols)
    return np.ascontiguousarray(arr, dtype=np.float64)


def write_matrix_csv(path, arr):
    """Human-inspectable alternative: one CSV row per matrix row."""
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in arr:
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append([float(v) for v in row])
    if not rows:
        raise DataError(f"{path}: empty matrix CSV")
    return np.asarray(rows, dtype=np.float64)
