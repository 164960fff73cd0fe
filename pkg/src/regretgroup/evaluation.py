"""Recall-based proposal quality metrics.

An object counts as detected when some proposal reaches the IoU threshold
with it; no one-to-one matching is imposed, so one proposal may detect
several objects. IoU defaults to point-set IoU over index sets; an
axis-aligned box mode is available for box-style comparison.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geometry import Aabb, LabeledCloud, aabb
from .grouping import Proposal

__all__ = [
    "ObjectBest",
    "EvalReport",
    "point_set_iou",
    "aabb_iou",
    "ground_truth_objects",
    "recall_at",
    "recall_curves",
    "write_report_csvs",
]

DEFAULT_IOU_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))  # 0.5 .. 0.95
DEFAULT_BUDGET_GRID = (1, 2, 3, 5, 10, 20, 50, 100)


@dataclass(frozen=True)
class ObjectBest:
    label: int
    best_iou: float
    best_proposal: int  # proposal segment id, -1 when there are no proposals


@dataclass(frozen=True)
class EvalReport:
    iou_mode: str
    per_object: tuple[ObjectBest, ...]
    iou_curve: tuple[tuple[float, float], ...]
    count_curve: tuple[tuple[int, float], ...]


def point_set_iou(p, g) -> float:
    """|p intersect g| / |p union g| over index sets."""
    p = np.unique(np.asarray(p, dtype=np.int64))
    g = np.unique(np.asarray(g, dtype=np.int64))
    if g.size == 0:
        raise ValueError("ground-truth set must be non-empty")
    if p.size == 0:
        return 0.0
    inter = np.intersect1d(p, g, assume_unique=True).size
    return float(inter / (p.size + g.size - inter))


def aabb_iou(a: Aabb, b: Aabb) -> float:
    """Intersection volume over union volume; degenerate boxes compare by identity."""
    overlap = np.maximum(0.0, np.minimum(a.max, b.max) - np.maximum(a.min, b.min))
    inter = float(np.prod(overlap))
    union = a.volume + b.volume - inter
    if union <= 0.0:
        same = np.array_equal(a.min, b.min) and np.array_equal(a.max, b.max)
        return 1.0 if same else 0.0
    return inter / union


def ground_truth_objects(cloud: LabeledCloud, min_object_points: int = 20) -> list[tuple[int, np.ndarray]]:
    """One (label, indices) object per non-background label with enough points."""
    if cloud.labels is None:
        raise ValueError("ground truth requires a labeled cloud")
    out = []
    for label in np.unique(cloud.labels):
        if label == 0:
            continue
        idx = np.flatnonzero(cloud.labels == label)
        if len(idx) >= min_object_points:
            out.append((int(label), idx))
    return out


def _ranked(proposals: list[Proposal]) -> list[Proposal]:
    return sorted(proposals, key=lambda p: (-p.score, p.segment.id))


def _iou_matrix(proposals, gts, mode: str, cloud: LabeledCloud | None) -> np.ndarray:
    """ious[i, j] between ranked proposal i and ground-truth object j."""
    if mode not in ("point", "box"):
        raise ValueError(f"unknown iou mode {mode!r}")
    if mode == "box" and cloud is None:
        raise ValueError("box IoU needs the cloud to compute bounding boxes")
    ious = np.zeros((len(proposals), len(gts)))
    if mode == "box":
        pboxes = [aabb(cloud, p.segment.indices) for p in proposals]
        gboxes = [aabb(cloud, idx) for _, idx in gts]
        for i, pb in enumerate(pboxes):
            for j, gb in enumerate(gboxes):
                ious[i, j] = aabb_iou(pb, gb)
    else:
        for i, p in enumerate(proposals):
            for j, (_, idx) in enumerate(gts):
                ious[i, j] = point_set_iou(p.segment.indices, idx)
    return ious


def recall_at(
    proposals: list[Proposal],
    gts: list[tuple[int, np.ndarray]],
    iou_threshold: float,
    budget: int | None = None,
    mode: str = "point",
    cloud: LabeledCloud | None = None,
) -> float:
    """Fraction of objects detected by the top-budget proposals (all if None)."""
    if not gts:
        raise ValueError("ground truth must be non-empty")
    ranked = _ranked(proposals)
    if budget is not None:
        ranked = ranked[: max(budget, 0)]
    if not ranked:
        return 0.0
    ious = _iou_matrix(ranked, gts, mode, cloud)
    detected = (ious >= iou_threshold).any(axis=0).sum()
    return float(detected / len(gts))


def recall_curves(
    proposals: list[Proposal],
    gts: list[tuple[int, np.ndarray]],
    iou_grid=DEFAULT_IOU_GRID,
    budget_grid=DEFAULT_BUDGET_GRID,
    fixed_iou: float = 0.5,
    mode: str = "point",
    cloud: LabeledCloud | None = None,
) -> EvalReport:
    """Recall-vs-IoU and recall-vs-budget curves plus the per-object best table."""
    if not gts:
        raise ValueError("ground truth must be non-empty")
    iou_grid = list(iou_grid)
    budget_grid = list(budget_grid)
    if not iou_grid or iou_grid != sorted(iou_grid):
        raise ValueError("iou_grid must be non-empty and sorted")
    if not budget_grid or budget_grid != sorted(budget_grid):
        raise ValueError("budget_grid must be non-empty and sorted")

    ranked = _ranked(proposals)
    n_obj = len(gts)
    if ranked:
        ious = _iou_matrix(ranked, gts, mode, cloud)
        best_i = ious.argmax(axis=0)
        per_object = tuple(
            ObjectBest(gts[j][0], float(ious[best_i[j], j]), int(ranked[best_i[j]].segment.id))
            for j in range(n_obj)
        )
        best_iou = ious.max(axis=0)
        iou_curve = tuple((float(t), float((best_iou >= t).sum() / n_obj)) for t in iou_grid)
        # rank (1-based) of the first proposal detecting each object at fixed_iou
        hits = ious >= fixed_iou
        first_rank = np.where(hits.any(axis=0), hits.argmax(axis=0) + 1, np.inf)
        count_curve = tuple(
            (int(b), float((first_rank <= b).sum() / n_obj)) for b in budget_grid
        )
    else:
        per_object = tuple(ObjectBest(lab, 0.0, -1) for lab, _ in gts)
        iou_curve = tuple((float(t), 0.0) for t in iou_grid)
        count_curve = tuple((int(b), 0.0) for b in budget_grid)

    recalls_iou = [r for _, r in iou_curve]
    if any(b > a for a, b in zip(recalls_iou, recalls_iou[1:])):
        raise AssertionError("recall-vs-IoU curve must be non-increasing")
    recalls_cnt = [r for _, r in count_curve]
    if any(b < a for a, b in zip(recalls_cnt, recalls_cnt[1:])):
        raise AssertionError("recall-vs-count curve must be non-decreasing")
    return EvalReport(mode, per_object, iou_curve, count_curve)


def write_report_csvs(report: EvalReport, out_dir, scene: str) -> None:
    """Write per_object.csv, recall_vs_iou.csv, recall_vs_count.csv.

    Header rows are fixed; the IoU mode is recorded as a leading comment line.
    """
    import os

    mode_line = f"# iou_mode={report.iou_mode}"
    with open(os.path.join(out_dir, "per_object.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(mode_line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["scene", "object", "best_iou", "best_proposal"])
        for row in report.per_object:
            writer.writerow([scene, row.label, "%.9g" % row.best_iou, row.best_proposal])
    with open(os.path.join(out_dir, "recall_vs_iou.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(mode_line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["iou_threshold", "recall"])
        for t, r in report.iou_curve:
            writer.writerow(["%.9g" % t, "%.9g" % r])
    with open(os.path.join(out_dir, "recall_vs_count.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(mode_line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["budget", "recall"])
        for b, r in report.count_curve:
            writer.writerow([b, "%.9g" % r])
