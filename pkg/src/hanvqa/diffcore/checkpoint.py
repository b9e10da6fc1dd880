"""Binary checkpoint files.

Layout (all integers little-endian):

    bytes 0..3    magic b"HVCK"
    bytes 4..7    uint32 container version (1)
    bytes 8..11   uint32 header length H
    bytes 12..    H bytes of UTF-8 JSON header
    then          raw float64 little-endian array data, concatenated

The JSON header lists every array (name, shape, element offset into the
data block) plus a caller-supplied ``meta`` object: format version,
hyperparameters, RNG seed, step count.  The JSON is dumped with sorted
keys and fixed separators so identical state produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FileFormatError
from .params import ParameterStore

MAGIC = b"HVCK"
VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, store: ParameterStore, meta: dict) -> None:
    arrays = store.arrays()
    entries = []
    offset = 0
    for name, arr in arrays.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = _canonical_json({"version": VERSION, "arrays": entries, "meta": meta})
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        for arr in arrays.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return (name -> float64 array, meta)."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise FileFormatError(f"{path}: bad magic {blob[:4]!r}", offset=0)
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise FileFormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FileFormatError(f"{path}: corrupt JSON header: {e}", offset=12) from None
    data_start = 12 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        lo = data_start + entry["offset"] * 8
        hi = lo + count * 8
        if hi > len(blob):
            raise FileFormatError(
                f"{path}: array {entry['name']!r} runs past end of file", offset=lo
            )
        arrays[entry["name"]] = np.frombuffer(
            blob[lo:hi], dtype="<f8"
        ).astype(np.float64).reshape(shape)
    return arrays, header["meta"]
