"""Procedural labeled table-top scenes for reproducible training and evaluation.

Scenes are a sampled table plane (label 0) plus primitive objects (labels
1..N) floating slightly above it. Placement is rejection-sampled so that, by
construction, no face plane of one object passes close to another object's
points and no two horizontal faces are near-coplanar; iterative plane
extraction then yields single-object segments. The checks cover planar faces
only, so clouds with cylinders can still leak a thin cross-object strip when
a face plane slices a lateral surface.

The adversarial mode plants a large box interpenetrated by a thin two-part
object: proximity-driven predictors score the crossing pair above the merge
threshold, which is exactly the mistake the regret pool exists to catch.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .geometry import LabeledCloud, save_xyzl

__all__ = [
    "ShapeSpec",
    "SceneSpec",
    "sample_shape",
    "generate_scene",
    "generate_dataset",
]

_KINDS = ("box", "cylinder", "lshape")
_MAX_POSE_TRIES = 1000


@dataclass(frozen=True)
class ShapeSpec:
    """One primitive: kind, size parameters (meters), pose, surface density."""

    kind: str
    size: tuple[float, ...]
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    density: float = 25000.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if any(s <= 0 for s in self.size):
            raise ValueError("size parameters must be positive")
        if self.density <= 0:
            raise ValueError("density must be positive")
        expect = {"box": 3, "cylinder": 2, "lshape": 5}[self.kind]
        if len(self.size) != expect:
            raise ValueError(f"{self.kind} needs {expect} size parameters")


@dataclass(frozen=True)
class SceneSpec:
    """Knobs for one generated scene; seed is the default for generate_scene."""

    table_extent: float = 1.2
    n_objects: tuple[int, int] = (3, 8)
    shape_weights: tuple[tuple[str, float], ...] = (("box", 0.6), ("lshape", 0.4))
    gap_range: tuple[float, float] = (0.025, 0.4)
    view_dir: tuple[float, float, float] | None = None
    seed: int = 0
    density: float = 25000.0
    table_density: float = 4000.0
    size_range: tuple[float, float] = (0.05, 0.13)
    clearance_range: tuple[float, float] = (0.03, 0.08)
    plane_margin: float | None = 0.022
    adversarial: bool = False

    def __post_init__(self):
        if self.table_extent <= 0:
            raise ValueError("table_extent must be positive")
        lo, hi = self.n_objects
        if lo < 1 or hi < lo:
            raise ValueError("n_objects range must satisfy 1 <= lo <= hi")
        if not self.shape_weights or any(k not in _KINDS or w < 0 for k, w in self.shape_weights):
            raise ValueError("shape_weights must map known kinds to non-negative weights")
        if sum(w for _, w in self.shape_weights) <= 0:
            raise ValueError("shape_weights must not all be zero")
        if self.density <= 0 or self.table_density <= 0:
            raise ValueError("densities must be positive")
        if self.size_range[0] <= 0 or self.size_range[1] < self.size_range[0]:
            raise ValueError("size_range must be positive and ascending")
        if self.gap_range[1] < self.gap_range[0]:
            raise ValueError("gap_range must be ascending")


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _box_faces(size, center):
    """Rectangular faces as (origin, u, v, outward normal) in the local frame."""
    sx, sy, sz = size
    cx, cy, cz = center
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    return [
        ((cx - hx, cy - hy, cz + hz), (sx, 0, 0), (0, sy, 0), (0, 0, 1)),
        ((cx - hx, cy - hy, cz - hz), (sx, 0, 0), (0, sy, 0), (0, 0, -1)),
        ((cx - hx, cy - hy, cz - hz), (0, sy, 0), (0, 0, sz), (-1, 0, 0)),
        ((cx + hx, cy - hy, cz - hz), (0, sy, 0), (0, 0, sz), (1, 0, 0)),
        ((cx - hx, cy - hy, cz - hz), (sx, 0, 0), (0, 0, sz), (0, -1, 0)),
        ((cx - hx, cy + hy, cz - hz), (sx, 0, 0), (0, 0, sz), (0, 1, 0)),
    ]


def _lshape_boxes(size):
    """An L prism as two disjoint sub-boxes sharing the z extent."""
    sx, sy, sz, cut_fx, cut_fy = size
    cut_x, cut_y = sx * cut_fx, sy * cut_fy
    box_a = ((sx, sy - cut_y, sz), (0.0, -cut_y / 2, 0.0))
    box_b = ((sx - cut_x, cut_y, sz), (-cut_x / 2, sy / 2 - cut_y / 2, 0.0))
    return [box_a, box_b]


def _shape_faces(spec: ShapeSpec):
    if spec.kind == "box":
        return _box_faces(spec.size, (0.0, 0.0, 0.0))
    if spec.kind == "lshape":
        faces = []
        for size, center in _lshape_boxes(spec.size):
            faces.extend(_box_faces(size, center))
        return faces
    raise ValueError("cylinders have no rectangular faces")


def _sample_shape(spec: ShapeSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform surface points and outward normals, posed in world frame."""
    rot = _yaw_matrix(spec.yaw)
    pos = np.asarray(spec.position, dtype=np.float64)
    if spec.kind == "cylinder":
        r, h = spec.size
        areas = np.array([2 * math.pi * r * h, math.pi * r * r, math.pi * r * r])
        total = int(round(areas.sum() * spec.density))
        counts = rng.multinomial(total, areas / areas.sum())
        pts, nrm = [], []
        n_lat = counts[0]
        theta = rng.random(n_lat) * 2 * math.pi
        z = (rng.random(n_lat) - 0.5) * h
        pts.append(np.column_stack([r * np.cos(theta), r * np.sin(theta), z]))
        nrm.append(np.column_stack([np.cos(theta), np.sin(theta), np.zeros(n_lat)]))
        for count, zc, nz in ((counts[1], h / 2, 1.0), (counts[2], -h / 2, -1.0)):
            rad = r * np.sqrt(rng.random(count))
            theta = rng.random(count) * 2 * math.pi
            pts.append(np.column_stack([rad * np.cos(theta), rad * np.sin(theta), np.full(count, zc)]))
            nrm.append(np.tile([0.0, 0.0, nz], (count, 1)))
        points = np.vstack(pts)
        normals = np.vstack(nrm)
    else:
        faces = _shape_faces(spec)
        areas = np.array([np.linalg.norm(u) * np.linalg.norm(v) for _, u, v, _ in faces])
        total = int(round(areas.sum() * spec.density))
        counts = rng.multinomial(total, areas / areas.sum())
        pts, nrm = [], []
        for (origin, u, v, normal), count in zip(faces, counts):
            uu = rng.random(count)[:, None]
            vv = rng.random(count)[:, None]
            pts.append(np.asarray(origin) + uu * np.asarray(u, dtype=np.float64) + vv * np.asarray(v, dtype=np.float64))
            nrm.append(np.tile(normal, (count, 1)).astype(np.float64))
        points = np.vstack(pts) if pts else np.zeros((0, 3))
        normals = np.vstack(nrm) if nrm else np.zeros((0, 3))
    return points @ rot.T + pos, normals @ rot.T


def sample_shape(spec: ShapeSpec, rng) -> np.ndarray:
    """Surface point sample of one shape; count is round(area * density)."""
    points, _ = _sample_shape(spec, rng)
    return points


def _shape_planes(spec: ShapeSpec) -> np.ndarray:
    """World-frame (nx, ny, nz, d) rows for each planar face (cylinder: caps only)."""
    rot = _yaw_matrix(spec.yaw)
    pos = np.asarray(spec.position, dtype=np.float64)
    rows = []
    if spec.kind == "cylinder":
        _, h = spec.size
        for zc, nz in ((h / 2, 1.0), (-h / 2, -1.0)):
            n = rot @ np.array([0.0, 0.0, nz])
            p = rot @ np.array([0.0, 0.0, zc]) + pos
            rows.append([*n, -float(n @ p)])
    else:
        for origin, _, _, normal in _shape_faces(spec):
            n = rot @ np.asarray(normal, dtype=np.float64)
            p = rot @ np.asarray(origin, dtype=np.float64) + pos
            rows.append([*n, -float(n @ p)])
    return np.array(rows)


def _signed_gap(lo_a, hi_a, lo_b, hi_b) -> float:
    """Largest per-axis separation; negative means the boxes overlap in 3D."""
    return float(np.max(np.maximum(lo_a, lo_b) - np.minimum(hi_a, hi_b)))


def _plane_clearance_ok(planes: np.ndarray, points: np.ndarray, margin: float) -> bool:
    if planes.size == 0 or points.size == 0:
        return True
    dist = np.abs(points @ planes[:, :3].T + planes[:, 3])
    return bool(dist.min() >= margin)


@dataclass
class _Placed:
    label: int
    points: np.ndarray
    normals: np.ndarray
    planes: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


# Plane clearance only matters between nearby objects: a plane's inlier strip
# through a distant structure is spatially disconnected from the face itself
# and gets dropped by the segmenter's connectivity refinement.
_PLANE_CHECK_REACH = 0.08


def _shape_aabb(spec: ShapeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Analytic world-frame bounds, no sampling needed."""
    rot = np.abs(_yaw_matrix(spec.yaw))
    pos = np.asarray(spec.position, dtype=np.float64)
    if spec.kind == "cylinder":
        r, h = spec.size
        half = np.array([r, r, h / 2])
        return pos - half, pos + half
    boxes = [(spec.size, (0.0, 0.0, 0.0))] if spec.kind == "box" else _lshape_boxes(spec.size)
    los, his = [], []
    for size, center in boxes:
        half = rot @ (np.asarray(size, dtype=np.float64) / 2)
        c = _yaw_matrix(spec.yaw) @ np.asarray(center, dtype=np.float64) + pos
        los.append(c - half)
        his.append(c + half)
    return np.min(los, axis=0), np.max(his, axis=0)


def _box_fits(spec: SceneSpec, lo, hi, placed: list[_Placed]) -> tuple[bool, list[float]]:
    half = spec.table_extent / 2
    if lo[0] < -half or lo[1] < -half or hi[0] > half or hi[1] > half:
        return False, []
    gaps = []
    for other in placed:
        gap = _signed_gap(lo, hi, other.lo, other.hi)
        if gap < spec.gap_range[0]:
            return False, []
        gaps.append(gap)
    if gaps and min(gaps) > spec.gap_range[1]:
        return False, []
    return True, gaps


def _margin_fits(spec: SceneSpec, cand_pts, cand_planes, placed: list[_Placed], gaps: list[float]) -> bool:
    if spec.plane_margin is None:
        return True
    for other, gap in zip(placed, gaps):
        if gap > _PLANE_CHECK_REACH:
            continue
        if not _plane_clearance_ok(cand_planes, other.points, spec.plane_margin):
            return False
        if not _plane_clearance_ok(other.planes, cand_pts, spec.plane_margin):
            return False
    return True


def _random_shape(spec: SceneSpec, rng) -> ShapeSpec:
    kinds = [k for k, _ in spec.shape_weights]
    weights = np.array([w for _, w in spec.shape_weights], dtype=np.float64)
    kind = kinds[int(rng.choice(len(kinds), p=weights / weights.sum()))]
    lo, hi = spec.size_range
    if kind == "box":
        size = tuple(rng.uniform(lo, hi, size=3))
    elif kind == "cylinder":
        size = (rng.uniform(lo / 2, hi / 2), rng.uniform(lo, hi))
    else:
        size = (
            rng.uniform(lo, hi) * 1.2,
            rng.uniform(lo, hi) * 1.2,
            rng.uniform(lo, hi),
            rng.uniform(0.35, 0.6),
            rng.uniform(0.35, 0.6),
        )
    height = size[1] if kind == "cylinder" else size[2]
    clearance = rng.uniform(*spec.clearance_range)
    half = spec.table_extent / 2 - hi - 0.02
    x, y = rng.uniform(-half, half, size=2)
    return ShapeSpec(kind, size, (float(x), float(y), float(clearance + height / 2)), float(rng.uniform(0, math.pi)), spec.density)


# Adversarial trio geometry. A large "wall" box is pierced by the thin blade
# of a two-part object so their crossing faces sit at zero gap; the blade's
# companion block gives the blade's side a neighborhood able to veto the
# cross-object merge. Heights are staggered so horizontal faces stay apart.
_ADV_WALL_SIZE = (0.16, 0.16, 0.13)
_ADV_BLADE_SIZE = (0.11, 0.012, 0.10)
_ADV_BLOCK_SIZE = (0.05, 0.05, 0.05)
_ADV_PENETRATION = 0.005
_ADV_BLOCK_GAP = 0.012
_ADV_WALL_CLEAR = 0.03
_ADV_BLADE_CLEAR = 0.045
_ADV_BLOCK_CLEAR = 0.06


def _adversarial_trio(spec: SceneSpec, rng) -> list[tuple[int, ShapeSpec]]:
    yaw = float(rng.uniform(0, math.pi))
    rot = _yaw_matrix(yaw)
    cx, cy = rng.uniform(-0.12, 0.12, size=2)
    wall = ShapeSpec(
        "box", _ADV_WALL_SIZE, (float(cx), float(cy), _ADV_WALL_CLEAR + _ADV_WALL_SIZE[2] / 2), yaw, spec.density
    )
    # blade: long axis along the wall normal, big faces perpendicular to the wall face
    bx = _ADV_WALL_SIZE[0] / 2 - _ADV_PENETRATION + _ADV_BLADE_SIZE[0] / 2
    off = rot @ np.array([bx, float(rng.uniform(-0.02, 0.02)), 0.0])
    blade = ShapeSpec(
        "box",
        _ADV_BLADE_SIZE,
        (float(cx + off[0]), float(cy + off[1]), _ADV_BLADE_CLEAR + _ADV_BLADE_SIZE[2] / 2),
        yaw,
        spec.density,
    )
    gx = bx + _ADV_BLADE_SIZE[0] / 2 + _ADV_BLOCK_GAP + _ADV_BLOCK_SIZE[0] / 2
    off2 = rot @ np.array([gx, 0.0, 0.0])
    block = ShapeSpec(
        "box",
        _ADV_BLOCK_SIZE,
        (float(cx + off2[0]), float(cy + off2[1]), _ADV_BLOCK_CLEAR + _ADV_BLOCK_SIZE[2] / 2),
        yaw,
        spec.density,
    )
    return [(1, wall), (2, blade), (2, block)]


def generate_scene(spec: SceneSpec, seed: int | None = None) -> tuple[LabeledCloud, list[tuple[int, np.ndarray]]]:
    """Generate one labeled scene; returns the cloud and per-object index sets.

    Objects are placed by rejection sampling under the gap and plane-clearance
    constraints; after 1000 failed tries for an object the scene keeps fewer
    objects and warns. In adversarial mode the engineered trio is placed
    first, exempt from the constraints.
    """
    lo_n, hi_n = spec.n_objects
    if lo_n * spec.size_range[1] ** 2 > spec.table_extent**2:
        raise ValueError("table too small for the minimum object count")
    rng = np.random.default_rng(spec.seed if seed is None else seed)

    half = spec.table_extent / 2
    n_table = int(round(spec.table_extent**2 * spec.table_density))
    table_pts = np.column_stack(
        [rng.uniform(-half, half, n_table), rng.uniform(-half, half, n_table), np.zeros(n_table)]
    )
    table_normals = np.tile([0.0, 0.0, 1.0], (n_table, 1))

    placed: list[_Placed] = []

    def place(label: int, shape: ShapeSpec) -> None:
        pts, nrm = _sample_shape(shape, rng)
        placed.append(
            _Placed(label, pts, nrm, _shape_planes(shape), pts.min(axis=0), pts.max(axis=0))
        )

    next_label = 1
    if spec.adversarial:
        for label, shape in _adversarial_trio(spec, rng):
            place(label, shape)
        next_label = 3

    target = int(rng.integers(lo_n, hi_n + 1))
    while next_label <= target:
        accepted = False
        for _ in range(_MAX_POSE_TRIES):
            shape = _random_shape(spec, rng)
            lo, hi = _shape_aabb(shape)
            ok, gaps = _box_fits(spec, lo, hi, placed)
            if not ok:
                continue
            pts, nrm = _sample_shape(shape, rng)
            planes = _shape_planes(shape)
            if not _margin_fits(spec, pts, planes, placed, gaps):
                continue
            placed.append(_Placed(next_label, pts, nrm, planes, pts.min(axis=0), pts.max(axis=0)))
            accepted = True
            break
        if not accepted:
            warnings.warn(
                f"placed only {next_label - 1} of {target} objects after {_MAX_POSE_TRIES} tries",
                stacklevel=2,
            )
            break
        next_label += 1

    all_pts = [table_pts] + [p.points for p in placed]
    all_nrm = [table_normals] + [p.normals for p in placed]
    all_lab = [np.zeros(n_table, dtype=np.int64)] + [
        np.full(len(p.points), p.label, dtype=np.int64) for p in placed
    ]
    points = np.vstack(all_pts)
    normals = np.vstack(all_nrm)
    labels = np.concatenate(all_lab)

    if spec.view_dir is not None:
        d = np.asarray(spec.view_dir, dtype=np.float64)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise ValueError("view_dir must be non-zero")
        keep = normals @ (d / norm) < 0.0
        points, labels = points[keep], labels[keep]

    cloud = LabeledCloud(points, labels)
    objects = [
        (int(lab), np.flatnonzero(labels == lab)) for lab in np.unique(labels) if lab != 0
    ]
    return cloud, objects


def generate_dataset(n_scenes: int, spec: SceneSpec, seed: int, out_dir) -> dict:
    """Write n_scenes XYZL files plus a manifest with a 70/15/15 split.

    Per-scene seeds derive from (seed, index); the split assignment is a
    seeded shuffle with floor(0.15 n) validation and test scenes.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be at least 1")
    os.makedirs(out_dir, exist_ok=True)
    n_val = int(0.15 * n_scenes)
    n_test = int(0.15 * n_scenes)
    order = np.random.default_rng(seed).permutation(n_scenes)
    split = {}
    for rank, i in enumerate(order):
        if rank < n_scenes - n_val - n_test:
            split[int(i)] = "train"
        elif rank < n_scenes - n_test:
            split[int(i)] = "val"
        else:
            split[int(i)] = "test"

    scenes = []
    for i in range(n_scenes):
        scene_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        cloud, _ = generate_scene(spec, seed=scene_seed)
        name = f"scene_{i:04d}.xyzl"
        save_xyzl(cloud, os.path.join(out_dir, name))
        scenes.append({"path": name, "split": split[i], "seed": scene_seed})
    manifest = {"scenes": scenes}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest
