"""CHNL1 binary field snapshots.

Layout: the ASCII line ``CHNL1``, an ASCII header line ``d n L t``, then
``n**d`` little-endian float64 values in row-major order.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .grid import TorusGrid

MAGIC = b"CHNL1"


class SnapshotError(ValueError):
    pass


def encode(u: np.ndarray, grid: TorusGrid, t: float) -> bytes:
    u = grid.check_field(u)
    header = f"{grid.d} {grid.n} {grid.L!r} {float(t)!r}\n".encode("ascii")
    return MAGIC + b"\n" + header + np.ascontiguousarray(u, dtype="<f8").tobytes(order="C")


def decode(data: bytes) -> tuple[np.ndarray, TorusGrid, float]:
    magic, _, rest = data.partition(b"\n")
    if magic != MAGIC:
        raise SnapshotError("not a CHNL1 snapshot (bad magic line)")
    header, _, payload = rest.partition(b"\n")
    try:
        d_s, n_s, L_s, t_s = header.decode("ascii").split()
        grid = TorusGrid(int(d_s), int(n_s), float(L_s))
        t = float(t_s)
    except (ValueError, UnicodeDecodeError) as exc:
        raise SnapshotError(f"malformed CHNL1 header: {header!r}") from exc
    if len(payload) != 8 * grid.size:
        raise SnapshotError(f"expected {8 * grid.size} payload bytes, found {len(payload)}")
    u = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(grid.shape)
    return u, grid, t


def write_snapshot(path, u, grid, t) -> Path:
    path = Path(path)
    path.write_bytes(encode(u, grid, t))
    return path


def read_snapshot(path):
    return decode(Path(path).read_bytes())


def snapshot_to_csv(snapshot_path, csv_path) -> int:
    """Write ``x[,y],u`` rows for external plotting; returns the row count."""
    u, grid, _ = read_snapshot(snapshot_path)
    cols = [c.ravel() for c in grid.coords]
    names = ["x", "y"][: grid.d] + ["u"]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols, u.ravel()):
            w.writerow([repr(float(v)) for v in row])
    return grid.size
