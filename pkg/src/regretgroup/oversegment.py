"""Decompose a cloud into planar segments by iterative RANSAC plane extraction.

Planes are extracted greedily from the remaining points until too few points
are left, the best plane is too small, or the plane cap is hit. Non-planar
leftovers are kept as one residual segment (they may belong to curved
objects). Large planes can then be dropped as background by size fraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import LabeledCloud, Segment

__all__ = [
    "Plane",
    "RansacConfig",
    "RansacDegenerateError",
    "point_plane_distance",
    "fit_plane_ransac",
    "oversegment",
    "remove_background",
    "write_segments",
    "read_segments",
]

_TRIAL_CHUNK = 128  # trials scored per distance-matrix block


class RansacDegenerateError(ValueError):
    """Every RANSAC trial drew a degenerate (collinear or duplicated) triple."""


@dataclass(frozen=True)
class Plane:
    """Plane n.p + d = 0 with unit normal n."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))


@dataclass(frozen=True)
class RansacConfig:
    epsilon: float = 0.01
    iterations: int = 500
    min_inliers: int = 30
    max_planes: int = 64
    background_fraction: float = 0.25
    seed: int = 0
    # An infinite plane slices thin strips out of every structure crossing its
    # slab; keeping only the largest connected component of the inliers stops
    # those strips from contaminating the segment. None disables refinement.
    connect_radius: float | None = 0.02

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be at least 3")
        if self.max_planes < 1:
            raise ValueError("max_planes must be at least 1")
        if not 0 < self.background_fraction <= 1:
            raise ValueError("background_fraction must be in (0, 1]")
        if self.connect_radius is not None and self.connect_radius <= 0:
            raise ValueError("connect_radius must be positive or None")


def point_plane_distance(p, plane: Plane) -> float:
    """Unsigned distance |n.p + d| from a point to a plane."""
    return float(abs(np.asarray(p, dtype=np.float64) @ plane.normal + plane.offset))


def _canonical_sign(normal: np.ndarray, offset: float) -> tuple[np.ndarray, float]:
    # Flip so the largest-magnitude normal component is positive.
    j = int(np.argmax(np.abs(normal)))
    if normal[j] < 0:
        return -normal, -offset
    return normal, offset


def fit_plane_ransac(cloud: LabeledCloud, candidate_indices, cfg: RansacConfig, rng) -> tuple[Plane, np.ndarray]:
    """Best-of-N-trials plane over the candidate points, then one least-squares refit.

    Each trial spans a plane through 3 random distinct points; the trial with
    the most inliers (distance <= epsilon) wins, earliest trial on ties. The
    winning plane is refit to its inliers (centroid plus smallest-eigenvector
    normal) and inliers are recomputed once.
    """
    idx = np.asarray(candidate_indices, dtype=np.int64)
    if idx.size < 3:
        raise ValueError("need at least 3 candidate points")
    pts = cloud.points[idx]
    n_pts = len(idx)

    best_count = -1
    best_normal = None
    best_offset = 0.0
    done = 0
    while done < cfg.iterations:
        t = min(_TRIAL_CHUNK, cfg.iterations - done)
        triples = rng.integers(0, n_pts, size=(t, 3))
        distinct = (
            (triples[:, 0] != triples[:, 1])
            & (triples[:, 0] != triples[:, 2])
            & (triples[:, 1] != triples[:, 2])
        )
        p0, p1, p2 = pts[triples[:, 0]], pts[triples[:, 1]], pts[triples[:, 2]]
        normals = np.cross(p1 - p0, p2 - p0)
        norms = np.linalg.norm(normals, axis=1)
        ok = distinct & (norms > 1e-12)
        if ok.any():
            normals[ok] /= norms[ok, None]
            offsets = -np.einsum("ij,ij->i", normals, p0)
            dist = np.abs(pts @ normals[ok].T + offsets[ok])
            counts = np.full(t, -1, dtype=np.int64)
            counts[ok] = (dist <= cfg.epsilon).sum(axis=0)
            ci = int(np.argmax(counts))
            if counts[ci] > best_count:
                best_count = int(counts[ci])
                best_normal = normals[ci]
                best_offset = float(offsets[ci])
        done += t
        # standard adaptive stop: enough trials for 99.9% confidence at the
        # observed inlier fraction; a function of draws so far, so deterministic
        if best_count > 0:
            frac = best_count / n_pts
            hit = frac * frac * frac
            if hit >= 1.0 or done * np.log1p(-min(hit, 1 - 1e-12)) <= np.log(1e-3):
                break

    if best_normal is None:
        raise RansacDegenerateError("all RANSAC trials were degenerate")

    mask = np.abs(pts @ best_normal + best_offset) <= cfg.epsilon
    sel = pts[mask]
    centroid = sel.mean(axis=0)
    centered = sel - centroid
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    normal = normal / np.linalg.norm(normal)
    offset = float(-normal @ centroid)
    normal, offset = _canonical_sign(normal, offset)
    mask = np.abs(pts @ normal + offset) <= cfg.epsilon
    return Plane(normal, offset), idx[mask]


_ABSORB_REACH = 0.05  # stray same-plane bits within this of the kept component rejoin


def _components(points: np.ndarray, radius: float) -> list[list[int]]:
    """Row groups of 26-connected voxel components at the given cell size."""
    keys = np.floor(points / radius).astype(np.int64)
    cells: dict[tuple[int, int, int], list[int]] = {}
    for i, c in enumerate(map(tuple, keys.tolist())):
        cells.setdefault(c, []).append(i)
    offsets = [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) != (0, 0, 0)
    ]
    seen: set[tuple[int, int, int]] = set()
    groups: list[list[int]] = []
    for start in cells:
        if start in seen:
            continue
        seen.add(start)
        stack = [start]
        comp = [start]
        while stack:
            cx, cy, cz = stack.pop()
            for dx, dy, dz in offsets:
                nb = (cx + dx, cy + dy, cz + dz)
                if nb in cells and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
                    comp.append(nb)
        groups.append([i for c in comp for i in cells[c]])
    return groups


def _plane_component(points: np.ndarray, indices: np.ndarray, radius: float) -> np.ndarray:
    """Largest connected inlier component plus nearby stray bits of the same plane.

    Foreign strips cut from distant structures stay beyond the absorb reach
    and are excluded; isolated sampling stragglers around the face rejoin.
    """
    groups = _components(points, radius)
    order = sorted(range(len(groups)), key=lambda gi: (-len(groups[gi]), int(indices[groups[gi]].min())))
    kept = list(groups[order[0]])
    rest = [groups[gi] for gi in order[1:]]
    lo = points[kept].min(axis=0)
    hi = points[kept].max(axis=0)
    changed = True
    while changed and rest:
        changed = False
        still = []
        for grp in rest:
            glo = points[grp].min(axis=0)
            ghi = points[grp].max(axis=0)
            gap = float(np.max(np.maximum(lo, glo) - np.minimum(hi, ghi)))
            if gap <= _ABSORB_REACH:
                kept.extend(grp)
                lo = np.minimum(lo, glo)
                hi = np.maximum(hi, ghi)
                changed = True
            else:
                still.append(grp)
        rest = still
    return np.sort(indices[kept])


def _regather(cloud: LabeledCloud, remaining: np.ndarray, component: np.ndarray, cfg: RansacConfig) -> np.ndarray:
    """Refit the plane to the kept component and re-collect its slab nearby.

    The RANSAC-stage refit sees every inlier, so far coplanar strips can bias
    it enough to clip rows off the true face; refitting on the clean component
    and gathering within the absorb reach recovers them.
    """
    sp = cloud.points[component]
    centroid = sp.mean(axis=0)
    centered = sp - centroid
    _, vecs = np.linalg.eigh(centered.T @ centered)
    normal = vecs[:, 0]
    dist = np.abs((cloud.points[remaining] - centroid) @ normal)
    cand = remaining[dist <= cfg.epsilon]
    lo = sp.min(axis=0) - _ABSORB_REACH
    hi = sp.max(axis=0) + _ABSORB_REACH
    inside = np.all((cloud.points[cand] >= lo) & (cloud.points[cand] <= hi), axis=1)
    return np.union1d(component, cand[inside])


def oversegment(cloud: LabeledCloud, cfg: RansacConfig) -> list[Segment]:
    """Extract planes as segments until nothing plane-like remains.

    With connect_radius set, each extracted segment is the largest connected
    component of the plane's inliers (plus its regathered slab); the stray
    inliers stay available for later planes. Segment index sets are pairwise
    disjoint; leftovers of at least min_inliers points become one residual
    segment, smaller leftovers are discarded. Deterministic for a fixed
    cfg.seed.
    """
    if len(cloud) == 0:
        raise ValueError("cannot segment an empty cloud")
    rng = np.random.default_rng(cfg.seed)
    remaining = np.arange(len(cloud), dtype=np.int64)
    segments: list[Segment] = []
    next_id = 0
    while len(remaining) >= cfg.min_inliers and len(segments) < cfg.max_planes:
        try:
            _, inliers = fit_plane_ransac(cloud, remaining, cfg, rng)
        except RansacDegenerateError:
            break
        if len(inliers) < cfg.min_inliers:
            break
        if cfg.connect_radius is not None:
            inliers = _plane_component(cloud.points[inliers], inliers, cfg.connect_radius)
            if len(inliers) < cfg.min_inliers:
                break
            inliers = _regather(cloud, remaining, inliers, cfg)
        segments.append(Segment(next_id, inliers))
        next_id += 1
        remaining = np.setdiff1d(remaining, inliers, assume_unique=True)
    if cfg.connect_radius is None:
        if len(remaining) >= cfg.min_inliers:
            segments.append(Segment(next_id, remaining))
        return segments
    # Leftovers cluster on the structures they fell off; one mixed residual
    # would weld those structures together downstream, so split it instead.
    if len(remaining):
        groups = _components(cloud.points[remaining], cfg.connect_radius)
        groups.sort(key=lambda g: int(remaining[g].min()))
        for grp in groups:
            if len(grp) >= cfg.min_inliers:
                segments.append(Segment(next_id, remaining[grp]))
                next_id += 1
    return segments


def remove_background(segments: list[Segment], total_points: int, cfg: RansacConfig) -> list[Segment]:
    """Drop segments larger than background_fraction of the scene, keep order."""
    limit = cfg.background_fraction * total_points
    return [s for s in segments if len(s) <= limit]


def write_segments(path, cloud_path: str, segments: list[Segment]) -> None:
    """Write the segments JSON document {"cloud": ..., "segments": [...]}."""
    doc = {
        "cloud": str(cloud_path),
        "segments": [{"id": int(s.id), "indices": s.indices.tolist()} for s in segments],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def read_segments(path) -> tuple[str, list[Segment]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    segments = [Segment(int(rec["id"]), np.asarray(rec["indices"], dtype=np.int64)) for rec in doc["segments"]]
    return doc["cloud"], segments
