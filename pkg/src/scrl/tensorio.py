"""Deterministic named-array container used for head checkpoints.

Little-endian throughout: magic ``SCTD``, u32 version, u32 entry count, then
per entry u16 name length, utf-8 name, u8 dtype code, u8 ndim, u32 dims,
raw data.  Entries are written in sorted name order so identical content
yields identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SCTD"
VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1", 4: "<u8"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class TensorFormatError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name])
            dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
            arr = np.ascontiguousarray(arr, dtype=dt)
            if arr.dtype not in _CODES:
                raise TensorFormatError(f"unsupported dtype {arr.dtype} for {name!r}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise TensorFormatError(f"truncated tensor file: expected {what}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise TensorFormatError("bad magic: not a tensor container")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise TensorFormatError(f"unsupported tensor container version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2, "entry header"))
        if code not in _DTYPES:
            raise TensorFormatError(f"unknown dtype code {code}")
        shape = tuple(
            struct.unpack("<I", take(4, "dim"))[0] for _ in range(ndim)
        )
        dt = np.dtype(_DTYPES[code])
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(take(size * dt.itemsize, f"data for {name!r}"), dtype=dt)
        out[name] = data.reshape(shape).copy()
    if off != len(blob):
        raise TensorFormatError("trailing bytes in tensor container")
    return out
