"""Writer for the .pidx tensor format.

Independent implementation of the documented layout so the adapter does not
depend on the analysis package: magic "PIDX", version 1, dtype code 1
(float32 little-endian), ndim byte (1-4), ndim x uint32 little-endian
extents, row-major payload.
"""

import struct

import numpy as np

MAGIC = b"PIDX"


class PidxError(ValueError):
    pass


def tensor_bytes(arr) -> bytes:
    a = np.asarray(arr)
    if a.ndim < 1 or a.ndim > 4:
        raise PidxError(f"ndim must be 1-4, got {a.ndim}")
    if any(e < 1 for e in a.shape):
        raise PidxError(f"extents must be >= 1, got {a.shape}")
    header = MAGIC + struct.pack("<BBB", 1, 1, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype="<f4").tobytes()


def write_tensor(path, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(arr))


def read_tensor(path) -> np.ndarray:
    """Self-check reader; the toolkit's own parser is the authority."""
    data = open(path, "rb").read()
    if data[:4] != MAGIC or data[4] != 1 or data[5] != 1:
        raise PidxError(f"{path}: bad header")
    ndim = data[6]
    shape = struct.unpack(f"<{ndim}I", data[7 : 7 + 4 * ndim])
    count = int(np.prod(shape))
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=7 + 4 * ndim)
    return flat.reshape(shape).copy()
