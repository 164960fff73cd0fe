"""Phased curriculum training of the grouping predictor.

Phase 1 trains on pairs labeled from the initial over-segmentation. Before
each following phase, every scene ranks its current adjacent pairs by the
model's predictions and merges the ground-truth-positive pairs among the top
k, so newly exposed larger-scale pairs join the training set: H_{i+1} is
H_i plus the pairs touching freshly merged segments. Training continues from
the previous phase's parameters and stops when no scene can merge anything.

Each pair example freezes its sampled, jointly centered point sets at
creation time; examples remain valid after their source segments merge away.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .adjacency import merge_adjacency
from .geometry import LabeledCloud, SampledSegment, Segment, center_pair
from .predictor import (
    AdamState,
    NetPredictor,
    OraclePredictor,
    PredictorModel,
    adam_step,
    loss_gradients,
    predict_pair,
    segment_sample,
)

__all__ = [
    "LabeledPair",
    "TrainConfig",
    "TrainScene",
    "CurriculumState",
    "PhaseLog",
    "label_pairs",
    "train_phase",
    "advance_phase",
    "curriculum_train",
    "pair_accuracy",
    "write_phase_log",
]


@dataclass(frozen=True)
class LabeledPair:
    """One training example: a frozen sampled pair with its ground-truth label."""

    scene: int
    a: int
    b: int
    y: int
    w: float
    xa: np.ndarray  # (n, 3), jointly centered
    xb: np.ndarray
    va: int  # valid rows in xa before the zero padding
    vb: int


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 32
    lr: float = 0.001
    weight_decay: float = 1e-4
    t_l: float = 0.001
    k: int = 3
    seed: int = 0
    max_phases: int = 64

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.k, self.max_phases) < 1:
            raise ValueError("epochs, batch_size, k, max_phases must be positive")
        if self.lr <= 0 or self.weight_decay < 0 or self.t_l <= 0:
            raise ValueError("lr and t_l must be positive, weight_decay non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class TrainScene:
    """Live grouping snapshot of one scene during the curriculum."""

    cloud: LabeledCloud
    segments: dict[int, Segment]
    pairs: set[tuple[int, int]]
    next_id: int

    @classmethod
    def build(cls, cloud: LabeledCloud, segments: list[Segment], pairs) -> "TrainScene":
        seg_map = {s.id: s for s in segments}
        return cls(cloud, seg_map, set(pairs), max(seg_map, default=-1) + 1)


@dataclass
class CurriculumState:
    phase: int
    pairs: list[LabeledPair]
    scenes: list[TrainScene]


@dataclass(frozen=True)
class PhaseLog:
    phase: int
    dataset_size: int
    epochs_run: int
    final_loss: float
    merges: int


def _make_pair(scene_idx: int, scene: TrainScene, pair, sample_n: int, oracle: OraclePredictor) -> LabeledPair:
    a, b = pair
    sa = segment_sample(scene.cloud, scene.segments[a], sample_n)
    sb = segment_sample(scene.cloud, scene.segments[b], sample_n)
    ca, cb = center_pair(sa, sb)
    y = int(oracle.predict(scene.cloud, scene.segments[a], scene.segments[b]))
    return LabeledPair(scene_idx, a, b, y, 1.0, ca.points, cb.points, ca.valid_count, cb.valid_count)


def label_pairs(scene_idx: int, scene: TrainScene, sample_n: int) -> list[LabeledPair]:
    """One labeled example per adjacent pair, majority-rule ground truth."""
    if scene.cloud.labels is None:
        raise ValueError("training scenes must be labeled")
    oracle = OraclePredictor(scene.cloud)
    return [_make_pair(scene_idx, scene, pair, sample_n, oracle) for pair in sorted(scene.pairs)]


def train_phase(model: PredictorModel, pairs: list[LabeledPair], cfg: TrainConfig, phase: int = 1):
    """Seeded mini-batch Adam epochs until the average data loss drops below t_l.

    The threshold applies to the epoch-average cross-entropy; the l2 penalty
    flows through the gradients but would otherwise floor the stopping rule.
    Returns (epochs_run, final_average_loss); hitting the epoch cap without
    converging is a normal return.
    """
    if not pairs:
        raise ValueError("training set must be non-empty")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, phase]).generate_state(1)[0])
    xa = np.stack([p.xa for p in pairs])
    xb = np.stack([p.xb for p in pairs])
    y = np.array([p.y for p in pairs], dtype=np.float64)
    w = np.array([p.w for p in pairs], dtype=np.float64)
    state = AdamState.for_model(model, lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(pairs)
    avg = float("inf")
    epochs_run = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            _, bce, grads = loss_gradients(
                model, xa[sel], xb[sel], y[sel], w[sel], weight_decay=cfg.weight_decay
            )
            adam_step(model, grads, state)
            total += bce * len(sel)
        avg = total / n
        epochs_run = epoch + 1
        if avg < cfg.t_l:
            break
    return epochs_run, float(avg)


def advance_phase(state: CurriculumState, model: PredictorModel, cfg: TrainConfig):
    """One selective-search style round: merge oracle-approved top-k pairs per scene.

    Returns (new_pairs, merges). New training examples are the adjacent pairs
    touching freshly merged segments; the training set grows monotonically.
    """
    predictor = NetPredictor(model)
    new_pairs: list[LabeledPair] = []
    merges = 0
    for si, scene in enumerate(state.scenes):
        if not scene.pairs:
            continue
        oracle = OraclePredictor(scene.cloud)
        scored = [
            (pair, predictor.predict(scene.cloud, scene.segments[pair[0]], scene.segments[pair[1]]))
            for pair in sorted(scene.pairs)
        ]
        scored.sort(key=lambda ps: (-ps[1], ps[0]))
        created = []
        for pair, _ in scored[: cfg.k]:
            a, b = pair
            if a not in scene.segments or b not in scene.segments:
                continue  # consumed earlier this round
            if oracle.predict(scene.cloud, scene.segments[a], scene.segments[b]) != 1.0:
                continue
            d = scene.next_id
            scene.next_id += 1
            union = Segment(d, np.union1d(scene.segments[a].indices, scene.segments[b].indices))
            del scene.segments[a]
            del scene.segments[b]
            scene.segments[d] = union
            scene.pairs = merge_adjacency(scene.pairs, a, b, d)
            created.append(d)
            merges += 1
        if created:
            touched = sorted(p for p in scene.pairs if p[0] in created or p[1] in created)
            new_pairs.extend(_make_pair(si, scene, pair, model.sample_n, oracle) for pair in touched)
    state.phase += 1
    state.pairs.extend(new_pairs)
    return new_pairs, merges


def curriculum_train(model: PredictorModel, scenes: list[TrainScene], cfg: TrainConfig):
    """Alternate training and merging until no scene can group anything.

    Returns (model, phase_logs); the model is trained in place, warm-started
    across phases.
    """
    state = CurriculumState(phase=1, pairs=[], scenes=scenes)
    for si, scene in enumerate(scenes):
        state.pairs.extend(label_pairs(si, scene, model.sample_n))
    if not state.pairs:
        raise ValueError("no trainable pairs at phase 1")
    logs: list[PhaseLog] = []
    while True:
        phase = state.phase
        size = len(state.pairs)
        epochs_run, final_loss = train_phase(model, state.pairs, cfg, phase)
        if phase >= cfg.max_phases:
            logs.append(PhaseLog(phase, size, epochs_run, final_loss, 0))
            break
        _, merges = advance_phase(state, model, cfg)
        logs.append(PhaseLog(phase, size, epochs_run, final_loss, merges))
        if merges == 0:
            break
    return model, logs


def pair_accuracy(model: PredictorModel, pairs: list[LabeledPair], threshold: float = 0.5) -> float:
    """Classification accuracy of the model on frozen pair examples."""
    if not pairs:
        raise ValueError("no pairs to evaluate")
    hits = 0
    for p in pairs:
        g = predict_pair(model, SampledSegment(p.xa, p.va), SampledSegment(p.xb, p.vb))
        hits += int((g >= threshold) == bool(p.y))
    return hits / len(pairs)


def write_phase_log(path, logs: list[PhaseLog]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "dataset_size", "epochs_run", "final_loss", "merges"])
        for row in logs:
            writer.writerow([row.phase, row.dataset_size, row.epochs_run, "%.9g" % row.final_loss, row.merges])
