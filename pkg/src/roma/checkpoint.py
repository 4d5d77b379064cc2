"""Binary checkpoint format.

Layout, all integers little-endian::

    b"ROMA"                     magic
    uint32                      format version (1)
    uint32                      number of arrays
    per array:
        uint16                  name length in bytes
        bytes                   UTF-8 name
        uint8                   dtype tag (0 = float32, 1 = float64)
        uint8                   rank
        uint32[rank]            dims
        bytes                   raw little-endian data, row-major

Arrays are written in mapping order, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"ROMA"
VERSION = 1
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise FormatError(f"{name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", _TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[_TAGS[arr.dtype]]).tobytes())
    return b"".join(parts)


def loads(raw: bytes) -> dict[str, np.ndarray]:
    if raw[:4] != MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = 12
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            tag, rank = struct.unpack_from("<BB", raw, pos)
            pos += 2
            if tag not in _DTYPES:
                raise FormatError(f"{name}: unknown dtype tag {tag}")
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            dtype = _DTYPES[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(raw):
                raise FormatError(f"{name}: truncated data")
            arrays[name] = np.frombuffer(raw, dtype=dtype, count=nbytes // dtype.itemsize,
                                         offset=pos).reshape(dims).astype(dtype.newbyteorder("="))
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"truncated or corrupt checkpoint ({exc})") from exc
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes after last array")
    return arrays


def save(path, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
