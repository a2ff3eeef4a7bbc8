"""Deterministic binary container: a JSON header followed by raw little-endian arrays.

Layout::

    b"MOXG" | u32 format version | u64 header length | header (UTF-8 JSON) | array bytes

The header lists every array as ``{"name", "dtype", "shape", "offset"}`` with
offsets relative to the start of the array region. Keys are sorted and no
timestamps are written, so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MOXG"
FORMAT_VERSION = 1
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


class FormatError(ValueError):
    pass


def _code(arr: np.ndarray) -> str:
    if np.issubdtype(arr.dtype, np.floating):
        return "f8"
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        return "i8"
    raise FormatError(f"cannot store array of dtype {arr.dtype}")


def write_container(path: str | Path, header: Mapping, arrays: Mapping[str, np.ndarray]) -> None:
    index = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        index.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    meta = {"header": header, "arrays": index}
    text = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(text)))
        fh.write(text)
        for raw in blobs:
            fh.write(raw)


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a container file")
    version, length = struct.unpack("<IQ", data[4:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    meta = json.loads(data[16 : 16 + length].decode("utf-8"))
    base = 16 + length
    arrays: dict[str, np.ndarray] = {}
    for entry in meta["arrays"]:
        dt = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = base + entry["offset"]
        if start + count * dt.itemsize > len(data):
            raise FormatError(f"{path}: truncated array {entry['name']!r}")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=start).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.float64 if entry["dtype"] == "f8" else np.int64)
    return meta["header"], arrays
