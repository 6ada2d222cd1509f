"""Binary snapshot files: a small header plus little-endian float64 samples.

Layout: magic b"IPMSNAP1", then little-endian u32 n1, u32 n2, f64 L,
f64 time, u32 name length, utf-8 name bytes, then n1*n2 float64 samples in
row-major order with x1 fastest (one vertical row after another).
"""

from __future__ import annotations

import struct

import numpy as np

from .grid import Grid, RealField

MAGIC = b"IPMSNAP1"


def write_snapshot(path, field: RealField, time: float, name: str) -> None:
    g = field.grid
    name_b = name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIddI", g.n1, g.n2, g.L, float(time), len(name_b)))
        fh.write(name_b)
        fh.write(field.values.astype("<f8").tobytes())


def read_snapshot(path):
    """Returns (RealField, time, name)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a snapshot file (bad magic {magic!r})")
        n1, n2, L, time, name_len = struct.unpack("<IIddI", fh.read(28))
        name = fh.read(name_len).decode("utf-8")
        payload = fh.read(n1 * n2 * 8)
        if len(payload) != n1 * n2 * 8:
            raise ValueError(f"{path}: truncated payload")
        values = np.frombuffer(payload, dtype="<f8").reshape(n2, n1)
    grid = Grid(n1, n2, L)
    return RealField(grid, values.astype(np.float64)), time, name
