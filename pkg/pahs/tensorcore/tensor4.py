"""
Rank-4 tensor helpers and the PT4 binary tensor format.

A Tensor4 is a C-contiguous numpy array laid out as (batch, channels, height,
width). PT4 files store one such array:

    magic   b"PAHS"
    version u8 = 1
    dtype   u8 (0 = float32, 1 = float64)
    dims    4 x u32 little-endian
    data    raw little-endian values in (b, c, h, w) row-major order
"""

import io
import logging
import struct
from pathlib import Path
from typing import BinaryIO, Tuple, Union

import numpy as np
import numpy.typing as npt

from pahs.errors import ContractError, FrameIOError, ShapeError

logger = logging.getLogger(__name__)

Tensor4 = npt.NDArray[np.floating]

PT4_MAGIC = b"PAHS"
PT4_VERSION = 1
_HEADER = struct.Struct("<4sBB4I")
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

PathLike = Union[str, Path]


def as_tensor4(x, name: str = "tensor") -> Tensor4:
    """Validate rank and finiteness, returning a C-contiguous float array"""
    arr = np.asarray(x)
    if arr.ndim != 4:
        raise ShapeError(name, "rank", 4, arr.ndim)
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name}: contains non-finite values")
    return np.ascontiguousarray(arr)


def zeros4(dims: Tuple[int, int, int, int], dtype=np.float32) -> Tensor4:
    return np.zeros(dims, dtype=dtype)


def pt4_dumps(x: Tensor4) -> bytes:
    """Serialize a rank-4 float32/float64 array to PT4 bytes"""
    arr = np.asarray(x)
    if arr.ndim != 4:
        raise ShapeError("pt4", "rank", 4, arr.ndim)
    if arr.dtype not in _DTYPE_CODES:
        raise ContractError(f"pt4: unsupported dtype {arr.dtype}")
    code = _DTYPE_CODES[arr.dtype]
    header = _HEADER.pack(PT4_MAGIC, PT4_VERSION, code, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes()


def pt4_read_stream(stream: BinaryIO, source: str = "<stream>") -> Tensor4:
    """Read exactly one PT4 blob from an open binary stream"""
    raw = stream.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise FrameIOError(source, "truncated PT4 header")
    magic, version, code, *dims = _HEADER.unpack(raw)
    if magic != PT4_MAGIC:
        raise FrameIOError(source, f"bad magic {magic!r}")
    if version != PT4_VERSION:
        raise FrameIOError(source, f"unsupported PT4 version {version}")
    if code not in _CODE_DTYPES:
        raise FrameIOError(source, f"unknown dtype code {code}")
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    payload = stream.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise FrameIOError(source, "truncated PT4 payload")
    arr = np.frombuffer(payload, dtype=dtype, count=count).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def pt4_loads(blob: bytes) -> Tensor4:
    return pt4_read_stream(io.BytesIO(blob))


def save_pt4(path: PathLike, x: Tensor4) -> Path:
    """Write a tensor to a PT4 file"""
    path = Path(path)
    try:
        path.write_bytes(pt4_dumps(x))
    except OSError as e:
        logger.error(f"Error writing {path}: {str(e)}")
        raise FrameIOError(path, str(e)) from e
    return path


def load_pt4(path: PathLike) -> Tensor4:
    """Read a tensor from a PT4 file"""
    path = Path(path)
    try:
        with path.open("rb") as f:
            return pt4_read_stream(f, source=str(path))
    except OSError as e:
        if isinstance(e, FrameIOError):
            raise
        logger.error(f"Error reading {path}: {str(e)}")
        raise FrameIOError(path, str(e)) from e
