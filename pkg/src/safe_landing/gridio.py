"""Plain-text grid dumps for debugging and golden-file tests.

Format (UTF-8 text)::

    # safe-landing grid v1
    X <int>
    Y <int>
    cell_size <float>
    anchor <x> <y>
    C <int>
    channels <name> <name> ...
    data
    <one line per cell, row-major over (i, j): C whitespace-separated values>

``anchor`` is the world position of the centre of cell (0, 0) (``nan nan``
when the grid is not yet anchored).  Channel names must not contain spaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = "# safe-landing grid v1"


@dataclass
class GridDump:
    values: np.ndarray
    cell_size: float
    anchor: np.ndarray
    channels: tuple[str, ...]


def dump_grid(
    path: str | Path,
    values: np.ndarray,
    cell_size: float,
    anchor: Sequence[float],
    channels: Sequence[str],
) -> None:
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[..., None]
    X, Y, C = values.shape
    if len(channels) != C:
        raise ValueError("one channel name per value channel required")
    if any(" " in c for c in channels):
        raise ValueError("channel names must not contain spaces")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{MAGIC}\nX {X}\nY {Y}\ncell_size {cell_size!r}\n")
        fh.write(f"anchor {float(anchor[0])!r} {float(anchor[1])!r}\nC {C}\n")
        fh.write("channels " + " ".join(channels) + "\ndata\n")
        np.savetxt(fh, values.reshape(X * Y, C), fmt="%.17g")


def load_grid(path: str | Path) -> GridDump:
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != MAGIC:
            raise ValueError(f"{path}: not a grid dump")
        header: dict[str, list[str]] = {}
        for line in fh:
            line = line.rstrip("\n")
            if line == "data":
                break
            key, _, rest = line.partition(" ")
            header[key] = rest.split()
        X, Y, C = int(header["X"][0]), int(header["Y"][0]), int(header["C"][0])
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (X * Y, C):
        raise ValueError(f"{path}: expected {(X * Y, C)} values, got {data.shape}")
    return GridDump(
        values=data.reshape(X, Y, C),
        cell_size=float(header["cell_size"][0]),
        anchor=np.array([float(a) for a in header["anchor"]]),
        channels=tuple(header["channels"]),
    )
