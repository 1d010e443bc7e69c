"""Occupancy summary statistics for voxel worlds and a distance over them."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .voxelworld import BLOCK_EDGE, VoxelWorld

CLASS_BINS = 12  # class ids are 0..11; foreign worlds with more ids error out


@dataclass
class OccupancyStats:
    occupied: int
    class_hist: np.ndarray    # (CLASS_BINS,) int64 voxels per class
    height_hist: np.ndarray   # (BLOCK_EDGE,) int64 voxels per z level
    surface_ratio: float      # exposed faces / (6 * occupied); 0 for empty
    column_contiguity: float  # fraction of nonempty columns with one solid run

    def __post_init__(self):
        self.class_hist = np.asarray(self.class_hist, dtype=np.int64)
        self.height_hist = np.asarray(self.height_hist, dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "occupied": self.occupied,
            "class_hist": self.class_hist.tolist(),
            "height_hist": self.height_hist.tolist(),
            "surface_ratio": self.surface_ratio,
            "column_contiguity": self.column_contiguity,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "OccupancyStats":
        return cls(int(d["occupied"]), np.array(d["class_hist"]),
                   np.array(d["height_hist"]), float(d["surface_ratio"]),
                   float(d["column_contiguity"]))


def world_stats(world: VoxelWorld) -> OccupancyStats:
    """Exact enumeration; an empty world yields all-zero stats."""
    occ = world.occ
    total = int(occ.sum())
    if total and world.cls[occ].max() >= CLASS_BINS:
        raise ValueError("class id outside the stats bin layout")
    class_hist = np.bincount(world.cls[occ].ravel(), minlength=CLASS_BINS).astype(np.int64)
    height_hist = occ.sum(axis=(0, 1)).astype(np.int64)

    if total == 0:
        return OccupancyStats(0, class_hist, height_hist, 0.0, 0.0)

    # exposed faces: occupied with empty (or out-of-world) neighbor, all 6 dirs
    padded = np.pad(occ, 1, constant_values=False)
    exposed = 0
    core = padded[1:-1, 1:-1, 1:-1]
    for ax in range(3):
        for off in (-1, 1):
            nb = np.roll(padded, off, axis=ax)[1:-1, 1:-1, 1:-1]
            exposed += int((core & ~nb).sum())
    surface_ratio = exposed / (6.0 * total)

    col_occ = occ.any(axis=2)
    counts = occ.sum(axis=2)
    zmax = (occ.shape[2] - 1) - np.argmax(occ[:, :, ::-1], axis=2)
    zmin = np.argmax(occ, axis=2)
    contiguous = col_occ & (counts == (zmax - zmin + 1))
    ncols = int(col_occ.sum())
    contiguity = float(contiguous.sum() / ncols) if ncols else 0.0

    return OccupancyStats(total, class_hist, height_hist, surface_ratio, contiguity)


def stats_distance(a: OccupancyStats, b: OccupancyStats) -> float:
    """L1 over normalized histograms plus absolute ratio differences.

    Zero iff the normalized summaries agree; symmetric; requires matching
    bin layouts.
    """
    if a.class_hist.shape != b.class_hist.shape or a.height_hist.shape != b.height_hist.shape:
        raise ValueError("stats have different bin layouts")

    def norm(h: np.ndarray, n: int) -> np.ndarray:
        return h.astype(np.float64) / n if n else np.zeros_like(h, dtype=np.float64)

    d = float(np.abs(norm(a.class_hist, a.occupied) - norm(b.class_hist, b.occupied)).sum())
    d += float(np.abs(norm(a.height_hist, a.occupied) - norm(b.height_hist, b.occupied)).sum())
    d += abs(a.surface_ratio - b.surface_ratio)
    d += abs(a.column_contiguity - b.column_contiguity)
    return d
