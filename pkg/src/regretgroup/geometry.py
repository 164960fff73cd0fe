"""Core point cloud types, file I/O, bounding boxes, and segment sampling.

Clouds are plain (N, 3) float64 arrays wrapped with optional integer labels
(label 0 is background). Segments index into their parent cloud and keep a
sorted, duplicate-free index array so that identical index sets always
compare and hash the same way downstream.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CloudFormatError",
    "LabeledCloud",
    "Segment",
    "Aabb",
    "SampledSegment",
    "load_xyzl",
    "save_xyzl",
    "load_ply",
    "aabb",
    "sample_and_pad",
    "center_pair",
    "content_seed",
]


class CloudFormatError(ValueError):
    """A point cloud file could not be parsed."""


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("points contain non-finite coordinates")
    return pts


@dataclass(frozen=True)
class LabeledCloud:
    """Points with optional per-point object labels (0 = background)."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (len(self.points),):
                raise ValueError("labels must have one entry per point")
            if labels.size and labels.min() < 0:
                raise ValueError("labels must be non-negative")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Segment:
    """A grouping unit: an id plus point indices into a parent cloud."""

    id: int
    indices: np.ndarray

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size == 0:
            raise ValueError("segment must contain at least one index")
        if idx[0] < 0:
            raise ValueError("segment indices must be non-negative")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box with inclusive corners."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if (lo > hi).any():
            raise ValueError("box min must not exceed max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool((p >= self.min).all() and (p <= self.max).all())


@dataclass(frozen=True)
class SampledSegment:
    """Fixed-size (n, 3) view of a segment: real rows first, zero padding after."""

    points: np.ndarray
    valid_count: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("sampled points must have shape (n, 3)")
        if not 0 <= self.valid_count <= len(pts):
            raise ValueError("valid_count out of range")
        if self.valid_count < len(pts) and np.any(pts[self.valid_count :]):
            raise ValueError("padding rows must be exactly zero")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def valid_points(self) -> np.ndarray:
        return self.points[: self.valid_count]


def load_xyzl(path) -> LabeledCloud:
    """Read an XYZL text file: one "x y z [label]" line per point.

    Lines starting with "#" and blank lines are skipped. Either every data
    line carries an integer label or none does.
    """
    points: list[list[float]] = []
    labels: list[int] = []
    has_labels: bool | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) not in (3, 4):
                raise CloudFormatError(
                    f"{path}:{lineno}: expected 'x y z [label]', got {len(fields)} fields"
                )
            try:
                xyz = [float(v) for v in fields[:3]]
            except ValueError:
                raise CloudFormatError(f"{path}:{lineno}: bad coordinate") from None
            if not all(math.isfinite(v) for v in xyz):
                raise CloudFormatError(f"{path}:{lineno}: non-finite coordinate")
            carries = len(fields) == 4
            if has_labels is None:
                has_labels = carries
            elif has_labels != carries:
                raise CloudFormatError(f"{path}:{lineno}: mixed labeled and unlabeled lines")
            if carries:
                try:
                    label = int(fields[3])
                except ValueError:
                    raise CloudFormatError(f"{path}:{lineno}: label must be an integer") from None
                if label < 0:
                    raise CloudFormatError(f"{path}:{lineno}: label must be non-negative")
                labels.append(label)
            points.append(xyz)
    pts = np.array(points, dtype=np.float64).reshape(-1, 3)
    return LabeledCloud(pts, np.array(labels, dtype=np.int64) if has_labels else None)


def save_xyzl(cloud: LabeledCloud, path) -> None:
    """Write a cloud as XYZL text, 9 significant digits per coordinate."""
    with open(path, "w", encoding="utf-8") as fh:
        if cloud.labels is None:
            for p in cloud.points:
                fh.write("%.9g %.9g %.9g\n" % (p[0], p[1], p[2]))
        else:
            for p, lab in zip(cloud.points, cloud.labels):
                fh.write("%.9g %.9g %.9g %d\n" % (p[0], p[1], p[2], lab))


_PLY_FLOAT_TYPES = {"float", "float32", "float64", "double"}
_PLY_INT_TYPES = {"char", "uchar", "int8", "uint8", "short", "ushort", "int16", "uint16", "int", "uint", "int32", "uint32"}


def load_ply(path) -> LabeledCloud:
    """Read an ASCII PLY with float x/y/z vertex properties.

    An integer vertex property named "label" populates cloud labels. Binary
    PLY files and list properties on the vertex element are rejected.
    """
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        first = fh.readline().strip()
        if first != "ply":
            raise CloudFormatError(f"{path}: not a PLY file")
        elements: list[tuple[str, int, list[tuple[str, str]]]] = []
        saw_format = False
        while True:
            line = fh.readline()
            if not line:
                raise CloudFormatError(f"{path}: unexpected end of header")
            tokens = line.strip().split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                if len(tokens) < 2 or tokens[1] != "ascii":
                    raise CloudFormatError(f"{path}: only ASCII PLY is supported")
                saw_format = True
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if not elements:
                    raise CloudFormatError(f"{path}: property before any element")
                if tokens[1] == "list":
                    elements[-1][2].append(("list", tokens[-1]))
                else:
                    elements[-1][2].append((tokens[1], tokens[2]))
            elif tokens[0] == "end_header":
                break
        if not saw_format:
            raise CloudFormatError(f"{path}: missing format line")

        points = np.zeros((0, 3))
        labels = None
        for name, count, props in elements:
            if name != "vertex":
                for _ in range(count):
                    fh.readline()
                continue
            if any(ptype == "list" for ptype, _ in props):
                raise CloudFormatError(f"{path}: list properties on vertex are unsupported")
            columns = {pname: i for i, (_, pname) in enumerate(props)}
            for axis in ("x", "y", "z"):
                if axis not in columns:
                    raise CloudFormatError(f"{path}: vertex element missing property '{axis}'")
                if props[columns[axis]][0] not in _PLY_FLOAT_TYPES:
                    raise CloudFormatError(f"{path}: vertex property '{axis}' must be float")
            has_label = "label" in columns and props[columns["label"]][0] in _PLY_INT_TYPES
            pts = np.zeros((count, 3), dtype=np.float64)
            labs = np.zeros(count, dtype=np.int64) if has_label else None
            for i in range(count):
                row = fh.readline().split()
                if len(row) != len(props):
                    raise CloudFormatError(f"{path}: vertex row {i} has {len(row)} fields, expected {len(props)}")
                pts[i] = [float(row[columns[a]]) for a in ("x", "y", "z")]
                if labs is not None:
                    labs[i] = int(row[columns["label"]])
            points, labels = pts, labs
    return LabeledCloud(points, labels)


def aabb(cloud: LabeledCloud, indices=None) -> Aabb:
    """Tight axis-aligned box over the selected points (all points if None)."""
    pts = cloud.points if indices is None else cloud.points[np.asarray(indices, dtype=np.int64)]
    if len(pts) == 0:
        raise ValueError("cannot bound an empty selection")
    return Aabb(pts.min(axis=0), pts.max(axis=0))


def sample_and_pad(cloud: LabeledCloud, segment: Segment, n: int, seed: int) -> SampledSegment:
    """Draw up to n segment points uniformly without replacement, zero-pad the rest.

    Deterministic for a fixed seed. Short segments keep all their points in a
    seed-determined order.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    idx = segment.indices
    if idx[-1] >= len(cloud):
        raise ValueError("segment indices exceed cloud size")
    rng = np.random.default_rng(seed)
    if len(idx) >= n:
        chosen = rng.choice(idx, size=n, replace=False)
    else:
        chosen = rng.permutation(idx)
    pts = np.zeros((n, 3), dtype=np.float64)
    pts[: len(chosen)] = cloud.points[chosen]
    return SampledSegment(pts, valid_count=min(len(idx), n))


def center_pair(a: SampledSegment, b: SampledSegment) -> tuple[SampledSegment, SampledSegment]:
    """Translate both samples by their joint centroid; padding rows stay zero.

    No scaling is applied, so absolute scale and relative pose survive.
    """
    va, vb = a.valid_count, b.valid_count
    if va + vb == 0:
        raise ValueError("both segments have no valid points")
    total = a.valid_points.sum(axis=0) + b.valid_points.sum(axis=0)
    centroid = total / (va + vb)
    pa = a.points.copy()
    pa[:va] -= centroid
    pb = b.points.copy()
    pb[:vb] -= centroid
    return SampledSegment(pa, va), SampledSegment(pb, vb)


def content_seed(indices, salt: int = 0) -> int:
    """Deterministic 32-bit seed derived from an index set's content."""
    data = np.ascontiguousarray(np.unique(np.asarray(indices, dtype=np.int64)))
    return zlib.crc32(data.tobytes(), salt & 0xFFFFFFFF)
