"""Dense tensor plumbing: the .pidx file format, a splittable PRNG, variance.

Tensors are plain numpy arrays (1 to 4 dims). Files store 32-bit floats,
little-endian; all arithmetic elsewhere in the package runs in 64-bit.

.pidx layout (bit-exact, no optional fields):
    bytes 0-3   magic ASCII "PIDX"
    byte  4     version, currently 1
    byte  5     dtype code, 1 = float32 little-endian
    byte  6     ndim, 1-4
    next        ndim x uint32 little-endian extents
    rest        row-major float32 payload, product(extents) * 4 bytes
"""

import struct

import numpy as np

MAGIC = b"PIDX"
VERSION = 1
DTYPE_F32 = 1
MAX_NDIM = 4
# Caps the decoded element count so a corrupt header cannot trigger a huge
# allocation; generous for desk-scale tensors.
MAX_ELEMENTS = 1 << 31


class TensorFormatError(ValueError):
    """Base class for .pidx encode/decode failures."""


class BadMagic(TensorFormatError):
    pass


class UnsupportedVersion(TensorFormatError):
    pass


class ShapeOverflow(TensorFormatError):
    pass


class TruncatedData(TensorFormatError):
    pass


class TrailingData(TensorFormatError):
    pass


class EmptyVector(ValueError):
    pass


def tensor_write(t) -> bytes:
    """Encode an array (1-4 dims) as .pidx bytes. Values are stored as float32."""
    arr = np.asarray(t)
    if arr.ndim < 1 or arr.ndim > MAX_NDIM:
        raise ShapeOverflow(f"ndim must be 1-{MAX_NDIM}, got {arr.ndim}")
    if any(e < 1 for e in arr.shape):
        raise ShapeOverflow(f"extents must be >= 1, got {arr.shape}")
    if any(e > 0xFFFFFFFF for e in arr.shape):
        raise ShapeOverflow(f"extent exceeds uint32 range: {arr.shape}")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return header + payload


def tensor_read(data: bytes) -> np.ndarray:
    """Decode .pidx bytes to a float32 array; rejects trailing garbage."""
    if len(data) < 4:
        raise TruncatedData("missing magic")
    if data[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {data[:4]!r}")
    if len(data) < 7:
        raise TruncatedData("missing header")
    version, dtype, ndim = struct.unpack("<BBB", data[4:7])
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} not supported")
    if dtype != DTYPE_F32:
        raise UnsupportedVersion(f"dtype code {dtype} not supported")
    if ndim < 1 or ndim > MAX_NDIM:
        raise ShapeOverflow(f"ndim must be 1-{MAX_NDIM}, got {ndim}")
    offset = 7 + 4 * ndim
    if len(data) < offset:
        raise TruncatedData("missing shape extents")
    shape = struct.unpack(f"<{ndim}I", data[7:offset])
    if any(e < 1 for e in shape):
        raise ShapeOverflow(f"extents must be >= 1, got {shape}")
    count = 1
    for e in shape:
        count *= e
    if count > MAX_ELEMENTS:
        raise ShapeOverflow(f"element count {count} exceeds limit")
    end = offset + 4 * count
    if len(data) < end:
        raise TruncatedData(f"payload needs {4 * count} bytes, have {len(data) - offset}")
    if len(data) > end:
        raise TrailingData(f"{len(data) - end} trailing bytes")
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    return flat.reshape(shape).copy()


def save_tensor(path, t) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_write(t))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_read(fh.read())


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream).

    Philox-4x64 keyed directly with the two words, so the stream depends only
    on the pair and is identical on every platform. Derive independent streams
    instead of sharing one generator across parallel work.
    """
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def variance(v) -> float:
    """Population variance (divide by N) of a flattened vector, in 64-bit."""
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyVector("variance of empty vector")
    return float(np.var(arr))
