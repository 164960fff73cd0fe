"""Adjacent-pair relation between segments via a shared-voxel test.

Two segments are adjacent when at least one voxel cell of an m x m x m grid
over the whole cloud contains points from both. Pairs are stored canonically
as (smaller id, larger id) tuples. After a merge the pair set is rewritten in
place of a grid rebuild; shared-voxel adjacency is preserved exactly under
set union, so rewriting is equivalent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .geometry import Aabb, LabeledCloud, Segment, aabb

__all__ = [
    "VoxelGrid",
    "voxel_of",
    "build_grid",
    "adjacent_pairs",
    "merge_adjacency",
    "canonical_pair",
]

_BOUNDS_PAD = 1e-6  # expansion per axis so boundary points always fall inside


PairSet = set[tuple[int, int]]


def canonical_pair(a: int, b: int) -> tuple[int, int]:
    if a == b:
        raise ValueError("self-pairs are not allowed")
    return (a, b) if a < b else (b, a)


@dataclass
class VoxelGrid:
    m: int
    bounds: Aabb
    cells: dict[tuple[int, int, int], set[int]]


def _cells_for(points: np.ndarray, bounds: Aabb, m: int) -> np.ndarray:
    extent = bounds.extent
    scale = np.where(extent > 0, extent, 1.0)
    cells = np.floor((points - bounds.min) / scale * m).astype(np.int64)
    cells = np.clip(cells, 0, m - 1)
    cells[:, extent <= 0] = 0
    return cells


def voxel_of(p, bounds: Aabb, m: int) -> tuple[int, int, int]:
    """Cell coordinate of a point; boundary-inclusive, clamped to m-1."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if not bounds.contains(p):
        raise ValueError("point outside grid bounds")
    c = _cells_for(p.reshape(1, 3), bounds, m)[0]
    return (int(c[0]), int(c[1]), int(c[2]))


def build_grid(cloud: LabeledCloud, segments: list[Segment], m: int) -> VoxelGrid:
    """Map each occupied cell to the ids of segments with a point in it."""
    box = aabb(cloud)
    bounds = Aabb(box.min - _BOUNDS_PAD, box.max + _BOUNDS_PAD)
    cells: dict[tuple[int, int, int], set[int]] = {}
    for seg in segments:
        coords = _cells_for(cloud.points[seg.indices], bounds, m)
        for c in np.unique(coords, axis=0).tolist():
            cells.setdefault(tuple(c), set()).add(seg.id)
    return VoxelGrid(m=m, bounds=bounds, cells=cells)


def adjacent_pairs(grid: VoxelGrid) -> PairSet:
    """All unordered id pairs that co-occupy at least one cell."""
    pairs: PairSet = set()
    for ids in grid.cells.values():
        if len(ids) < 2:
            continue
        for a, b in itertools.combinations(sorted(ids), 2):
            pairs.add((a, b))
    return pairs


def merge_adjacency(pairs: PairSet, a: int, b: int, d: int) -> PairSet:
    """Rewrite the pair set after merging adjacent segments a and b into d.

    Every pair touching a or b is redirected to d, the merged pair itself is
    dropped, and duplicates collapse. Neither a nor b survives.
    """
    key = canonical_pair(a, b)
    if key not in pairs:
        raise ValueError(f"pair {key} is not adjacent")
    out: PairSet = set()
    for x, y in pairs:
        if (x, y) == key:
            continue
        if x in (a, b):
            x = d
        if y in (a, b):
            y = d
        if x != y:
            out.add(canonical_pair(x, y))
    return out
