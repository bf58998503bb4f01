"""QSIM1 binary container.

Layout::

    b"QSIM1\\n"
    u64 LE  header length, then UTF-8 JSON header
            {"kind": ..., "meta": {...}, "tensors": [names in file order]}
    per tensor, in header order:
        u32 LE ndim, ndim x u64 LE dims, prod(dims) x f64 LE values

Every tensor is stored as float64, so integer arrays (tree child indices
and the like) round-trip exactly as long as they stay below 2**53.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError

MAGIC = b"QSIM1\n"


def save(path, kind: str, meta: Mapping, tensors: Mapping[str, np.ndarray]) -> None:
    header = json.dumps(
        {"kind": kind, "meta": meta, "tensors": list(tensors)},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def is_container(path) -> bool:
    try:
        with Path(path).open("rb") as fh:
            return fh.read(len(MAGIC)) == MAGIC
    except OSError:
        return False


def load(path, expect_kind: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise DataError(f"{path}: not a QSIM1 file")
    pos = len(MAGIC)
    try:
        (hlen,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        tensors = {}
        for name in header["tensors"]:
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            count = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
            tensors[name] = arr.astype(np.float64)
            pos += 8 * count
    except (struct.error, ValueError, KeyError) as exc:
        raise DataError(f"{path}: truncated or corrupt QSIM1 file ({exc})") from None
    if pos != len(data):
        raise DataError(f"{path}: {len(data) - pos} trailing bytes")
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise DataError(f"{path}: expected a {expect_kind!r} file, found {kind!r}")
    return kind, header["meta"], tensors
