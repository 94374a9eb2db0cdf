"""On-disk tensor format and 2D CSV matrices.

Binary layout: magic "DTNSR1", one version byte, ndim as an unsigned
byte, ndim little-endian uint64 extents, then row-major little-endian
float32 payload.
"""

import struct

import numpy as np

MAGIC = b"DTNSR1"
VERSION = 1


class TensorFileError(ValueError):
    """Malformed tensor file."""


def write_tensor(path, array):
    arr = np.asarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise TensorFileError(f"bad magic in {path}: {blob[:6]!r}")
    version, ndim = struct.unpack_from("<BB", blob, len(MAGIC))
    if version != VERSION:
        raise TensorFileError(f"unsupported version {version}")
    off = len(MAGIC) + 2
    if len(blob) < off + 8 * ndim:
        raise TensorFileError("truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", blob, off)
    off += 8 * ndim
    count = 1
    for d in dims:
        count *= d
        if count > 2**48:
            raise TensorFileError(f"dimension overflow: {dims}")
    expected = 4 * count
    payload = blob[off:]
    if len(payload) != expected:
        raise TensorFileError(
            f"payload length mismatch: expected {expected} bytes, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)


def write_csv_matrix(path, matrix):
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError("CSV matrices must be 2-dimensional")
    with open(path, "w") as fh:
        for row in m:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv_matrix(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValueError(f"{path} is not a rectangular CSV matrix")
    return np.asarray(rows, dtype=np.float64)
