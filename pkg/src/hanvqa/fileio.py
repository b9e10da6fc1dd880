"""Binary grid and map files.

Both formats are little-endian and byte-exact:

    feature grid:  magic b"FGRD" | uint32 version | uint32 m | uint32 l
                   | m * l*l float64, row-major (channels x cells)
    attention map: magic b"AMAP" | uint32 version | uint32 l
                   | l*l float64

A reader that hits a malformed field reports the byte offset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FileFormatError

GRID_MAGIC = b"FGRD"
MAP_MAGIC = b"AMAP"
FORMAT_VERSION = 1


@dataclass
class FeatureGrid:
    """Per-sample visual features: m channels over l*l spatial cells."""

    values: np.ndarray  # (m, l*l), float64
    side: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        m_l2 = self.values.shape
        if self.values.ndim != 2 or m_l2[1] != self.side * self.side:
            raise ContractError(
                f"feature grid shape {m_l2} inconsistent with side {self.side}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ContractError("feature grid contains non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def cells(self) -> int:
        return self.values.shape[1]


def write_feature_grid(path, grid: FeatureGrid) -> None:
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, grid.channels, grid.side))
        f.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def read_feature_grid(path) -> FeatureGrid:
    blob = Path(path).read_bytes()
    if blob[:4] != GRID_MAGIC:
        raise FileFormatError(f"{path}: bad feature-grid magic {blob[:4]!r}", offset=0)
    if len(blob) < 16:
        raise FileFormatError(f"{path}: truncated header", offset=4)
    version, m, side = struct.unpack("<III", blob[4:16])
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}", offset=4)
    expect = 16 + m * side * side * 8
    if len(blob) != expect:
        raise FileFormatError(
            f"{path}: payload is {len(blob) - 16} bytes, header implies {expect - 16}",
            offset=16,
        )
    values = np.frombuffer(blob[16:], dtype="<f8").astype(np.float64)
    return FeatureGrid(values.reshape(m, side * side), side)


def write_attention_map(path, values: np.ndarray, side: int) -> None:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size != side * side:
        raise ContractError(f"map length {values.size} != side {side} squared")
    with open(path, "wb") as f:
        f.write(MAP_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, side))
        f.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_attention_map(path) -> tuple[np.ndarray, int]:
    """Return (length l*l vector, side l)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAP_MAGIC:
        raise FileFormatError(f"{path}: bad attention-map magic {blob[:4]!r}", offset=0)
    if len(blob) < 12:
        raise FileFormatError(f"{path}: truncated header", offset=4)
    version, side = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}", offset=4)
    expect = 12 + side * side * 8
    if len(blob) != expect:
        raise FileFormatError(
            f"{path}: payload is {len(blob) - 12} bytes, header implies {expect - 12}",
            offset=12,
        )
    return np.frombuffer(blob[12:], dtype="<f8").astype(np.float64), side
