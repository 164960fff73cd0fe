"""Pair groupability predictors g(A, B) -> [0, 1].

Three implementations share one contract:

* ``NetPredictor`` wraps a trainable model: a shared per-point MLP with
  coordinate-wise max pooling encodes each segment, the two feature vectors
  are concatenated and pushed through a second MLP ending in a logistic
  output. Gradients are exact reverse-mode, written by hand.
* ``OraclePredictor`` answers from ground-truth labels (majority rule) and
  doubles as the training label source.
* ``HeuristicPredictor`` is a hand-crafted geometric baseline.

Callers must treat g as a function of unordered pairs by passing the
smaller-id segment first; concatenation order otherwise matters.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    LabeledCloud,
    SampledSegment,
    Segment,
    center_pair,
    content_seed,
    sample_and_pad,
)

__all__ = [
    "PROB_EPS",
    "GroupingPredictor",
    "PredictorModel",
    "AdamState",
    "OraclePredictor",
    "HeuristicPredictor",
    "NetPredictor",
    "encode_segment",
    "predict_pair",
    "bce_loss",
    "loss_gradients",
    "adam_step",
    "oracle_predict",
    "heuristic_predict",
    "segment_sample",
    "save_model",
    "load_model",
]

PROB_EPS = 1e-7  # predictions are clamped into [PROB_EPS, 1 - PROB_EPS]


class GroupingPredictor(ABC):
    """Deterministic estimator of the probability two segments share an object."""

    @abstractmethod
    def predict(self, cloud: LabeledCloud, a: Segment, b: Segment) -> float:
        """Return a groupability score in [0, 1]."""


@dataclass
class PredictorModel:
    """Parameters of the point encoder and the pair MLP.

    Weight matrices are (fan_in, fan_out); biases are flat vectors. The pair
    MLP input width is twice the final encoder width and its output width
    is 1.
    """

    sample_n: int
    seed: int
    encoder_weights: list[np.ndarray]
    encoder_biases: list[np.ndarray]
    mlp_weights: list[np.ndarray]
    mlp_biases: list[np.ndarray]

    def __post_init__(self):
        if self.sample_n < 1:
            raise ValueError("sample_n must be at least 1")
        if not self.encoder_weights or not self.mlp_weights:
            raise ValueError("model needs at least one encoder and one MLP layer")
        width = 3
        for i, (w, b) in enumerate(zip(self.encoder_weights, self.encoder_biases)):
            if w.shape[0] != width or b.shape != (w.shape[1],):
                raise ValueError(f"encoder layer {i} shapes do not chain")
            width = w.shape[1]
        width = 2 * width
        for i, (w, b) in enumerate(zip(self.mlp_weights, self.mlp_biases)):
            if w.shape[0] != width or b.shape != (w.shape[1],):
                raise ValueError(f"mlp layer {i} shapes do not chain")
            width = w.shape[1]
        if width != 1:
            raise ValueError("final MLP layer must have output width 1")
        for arr in (*self.encoder_weights, *self.encoder_biases, *self.mlp_weights, *self.mlp_biases):
            if not np.isfinite(arr).all():
                raise ValueError("model parameters must be finite")

    @classmethod
    def create(cls, encoder_widths=(32, 64, 128), mlp_widths=(128, 64, 32), sample_n=256, seed=0):
        """Glorot-uniform weights, zero biases, seeded."""
        rng = np.random.default_rng(seed)

        def glorot(nin, nout):
            lim = np.sqrt(6.0 / (nin + nout))
            return rng.uniform(-lim, lim, size=(nin, nout))

        enc_w, enc_b = [], []
        width = 3
        for out in encoder_widths:
            enc_w.append(glorot(width, out))
            enc_b.append(np.zeros(out))
            width = out
        mlp_w, mlp_b = [], []
        width = 2 * width
        for out in (*mlp_widths, 1):
            mlp_w.append(glorot(width, out))
            mlp_b.append(np.zeros(out))
            width = out
        return cls(sample_n, seed, enc_w, enc_b, mlp_w, mlp_b)

    @property
    def encoder_widths(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.encoder_weights)

    @property
    def mlp_widths(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.mlp_weights[:-1])

    @property
    def feature_dim(self) -> int:
        return self.encoder_weights[-1].shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by stable names, in a fixed order."""
        out: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.encoder_weights, self.encoder_biases)):
            out[f"enc_w{i}"] = w
            out[f"enc_b{i}"] = b
        for i, (w, b) in enumerate(zip(self.mlp_weights, self.mlp_biases)):
            out[f"mlp_w{i}"] = w
            out[f"mlp_b{i}"] = b
        return out


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _encoder_forward(model: PredictorModel, x: np.ndarray):
    """x: (B, n, 3). Returns pooled features (B, d), argmax rows, pre-activations."""
    B, n, _ = x.shape
    h = x.reshape(B * n, 3)
    pre = []
    for w, b in zip(model.encoder_weights, model.encoder_biases):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
    h = h.reshape(B, n, -1)
    feat = h.max(axis=1)
    amax = h.argmax(axis=1)
    return feat, amax, pre


def _pair_forward(model: PredictorModel, xa: np.ndarray, xb: np.ndarray):
    fa, ia, pre_a = _encoder_forward(model, xa)
    fb, ib, pre_b = _encoder_forward(model, xb)
    h = np.concatenate([fa, fb], axis=1)
    acts = [h]
    pre_m = []
    for w, b in zip(model.mlp_weights[:-1], model.mlp_biases[:-1]):
        z = h @ w + b
        pre_m.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    z_out = h @ model.mlp_weights[-1] + model.mlp_biases[-1]
    g_raw = _sigmoid(z_out[:, 0])
    cache = (ia, pre_a, ib, pre_b, acts, pre_m)
    return g_raw, cache


def encode_segment(model: PredictorModel, s: SampledSegment) -> np.ndarray:
    """Shared per-point MLP + coordinate-wise max pool; order-invariant."""
    if len(s) != model.sample_n:
        raise ValueError(f"expected {model.sample_n} rows, got {len(s)}")
    feat, _, _ = _encoder_forward(model, s.points[None])
    return feat[0]


def predict_pair(model: PredictorModel, a: SampledSegment, b: SampledSegment) -> float:
    """Groupability of an ordered sample pair, strictly inside (0, 1)."""
    if len(a) != model.sample_n or len(b) != model.sample_n:
        raise ValueError(f"both samples must have {model.sample_n} rows")
    g_raw, _ = _pair_forward(model, a.points[None], b.points[None])
    return float(np.clip(g_raw[0], PROB_EPS, 1.0 - PROB_EPS))


def bce_loss(predictions, labels, weights=None) -> float:
    """Mean weighted binary cross-entropy with clamped predictions."""
    g = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if g.shape != y.shape:
        raise ValueError("predictions and labels must have equal length")
    w = np.ones_like(g) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != g.shape:
        raise ValueError("weights must match predictions in length")
    if ((y != 0) & (y != 1)).any():
        raise ValueError("labels must be 0 or 1")
    if (w <= 0).any():
        raise ValueError("weights must be positive")
    g = np.clip(g, PROB_EPS, 1.0 - PROB_EPS)
    return float(np.mean(-w * (y * np.log(g) + (1.0 - y) * np.log1p(-g))))


def loss_gradients(model: PredictorModel, xa, xb, y, w=None, weight_decay=0.0):
    """Mean clamped BCE over the batch plus l2 on weight matrices, with exact gradients.

    xa, xb: (B, n, 3) stacked sample pairs. Returns (total_loss, bce, grads)
    where grads mirrors model.parameters().
    """
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    if xa.ndim != 3 or xa.shape != xb.shape or xa.shape[1] != model.sample_n:
        raise ValueError("batch shapes must be (B, sample_n, 3) and match")
    B = xa.shape[0]
    if B == 0:
        raise ValueError("batch must be non-empty")
    y = np.asarray(y, dtype=np.float64).reshape(B)
    w = np.ones(B) if w is None else np.asarray(w, dtype=np.float64).reshape(B)

    g_raw, cache = _pair_forward(model, xa, xb)
    ia, pre_a, ib, pre_b, acts, pre_m = cache
    g = np.clip(g_raw, PROB_EPS, 1.0 - PROB_EPS)
    bce = float(np.mean(-w * (y * np.log(g) + (1.0 - y) * np.log1p(-g))))
    l2 = 0.0
    if weight_decay:
        l2 = weight_decay * sum(float((m * m).sum()) for m in (*model.encoder_weights, *model.mlp_weights))
    total = bce + l2

    grads = {name: np.zeros_like(p) for name, p in model.parameters().items()}

    # dL/dz at the logistic input; the clamp blocks gradient when it is active.
    dl_dg = -w * (y / g - (1.0 - y) / (1.0 - g)) / B
    passes = (g_raw > PROB_EPS) & (g_raw < 1.0 - PROB_EPS)
    dz = (dl_dg * passes * g_raw * (1.0 - g_raw))[:, None]

    w_last = model.mlp_weights[-1]
    grads[f"mlp_w{len(model.mlp_weights) - 1}"] += acts[-1].T @ dz
    grads[f"mlp_b{len(model.mlp_weights) - 1}"] += dz.sum(axis=0)
    dh = dz @ w_last.T
    for l in reversed(range(len(model.mlp_weights) - 1)):
        dzl = dh * (pre_m[l] > 0)
        grads[f"mlp_w{l}"] += acts[l].T @ dzl
        grads[f"mlp_b{l}"] += dzl.sum(axis=0)
        dh = dzl @ model.mlp_weights[l].T

    d = model.feature_dim
    _encoder_backward(model, xa, pre_a, ia, dh[:, :d], grads)
    _encoder_backward(model, xb, pre_b, ib, dh[:, d:], grads)

    if weight_decay:
        for i, m in enumerate(model.encoder_weights):
            grads[f"enc_w{i}"] += 2.0 * weight_decay * m
        for i, m in enumerate(model.mlp_weights):
            grads[f"mlp_w{i}"] += 2.0 * weight_decay * m
    return total, bce, grads


def _encoder_backward(model, x, pre, amax, dfeat, grads):
    B, n, _ = x.shape
    d = dfeat.shape[1]
    dh = np.zeros((B, n, d))
    np.put_along_axis(dh, amax[:, None, :], dfeat[:, None, :], axis=1)
    dh = dh.reshape(B * n, d)
    for l in reversed(range(len(model.encoder_weights))):
        dzl = dh * (pre[l] > 0)
        a_prev = x.reshape(B * n, 3) if l == 0 else np.maximum(pre[l - 1], 0.0)
        grads[f"enc_w{l}"] += a_prev.T @ dzl
        grads[f"enc_b{l}"] += dzl.sum(axis=0)
        if l:
            dh = dzl @ model.encoder_weights[l].T


@dataclass
class AdamState:
    """First/second moment accumulators plus optimizer hyperparameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def for_model(cls, model: PredictorModel, lr=0.001, weight_decay=1e-4):
        params = model.parameters()
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            lr=lr,
            weight_decay=weight_decay,
        )


def adam_step(model: PredictorModel, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in model.parameters().items():
        gr = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * gr
        v *= state.beta2
        v += (1.0 - state.beta2) * gr * gr
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)


class OraclePredictor(GroupingPredictor):
    """Ground truth: 1.0 iff both majority labels match a foreground object.

    Majority ties break toward the smaller label id. Also used to produce
    training labels for adjacent pairs.
    """

    def __init__(self, cloud: LabeledCloud):
        if cloud.labels is None:
            raise ValueError("oracle predictor requires a labeled cloud")
        self._labels = cloud.labels
        self._majority: dict[bytes, int] = {}

    def majority_label(self, segment: Segment) -> int:
        key = segment.indices.tobytes()
        hit = self._majority.get(key)
        if hit is None:
            if segment.indices[-1] >= len(self._labels):
                raise ValueError("segment indices exceed labeled cloud size")
            hit = int(np.bincount(self._labels[segment.indices]).argmax())
            self._majority[key] = hit
        return hit

    def predict(self, cloud: LabeledCloud, a: Segment, b: Segment) -> float:
        ma = self.majority_label(a)
        mb = self.majority_label(b)
        return 1.0 if ma == mb and ma != 0 else 0.0


def oracle_predict(oracle: OraclePredictor, a: Segment, b: Segment) -> float:
    return oracle.predict(None, a, b)


# Heuristic feature weights, tuned on the adversarial synthetic suite so that
# touching segments score high, separated ones low, and merged cross-object
# unions look unlike their parts. The score is
#   sigmoid(BIAS - GAP_W * min_dist - CENT_W * centroid_dist + OV_W * box_overlap)
HEURISTIC_BIAS = 6.0
HEURISTIC_GAP_WEIGHT = 30.0
HEURISTIC_CENTROID_WEIGHT = 60.0
HEURISTIC_OVERLAP_WEIGHT = 1.0
_BOX_PAD = 0.01  # inflate zero-thickness face boxes before volume overlap
_MIN_DIST_CAP = 512  # per-side point cap for the min-distance estimate


def _subsample(points: np.ndarray, indices: np.ndarray) -> np.ndarray:
    if len(points) <= _MIN_DIST_CAP:
        return points
    rng = np.random.default_rng(content_seed(indices, salt=_MIN_DIST_CAP))
    pick = rng.choice(len(points), size=_MIN_DIST_CAP, replace=False)
    return points[pick]


def heuristic_predict(cloud: LabeledCloud, a: Segment, b: Segment) -> float:
    """Logistic score over inter-segment gap, centroid distance, box overlap."""
    pa = cloud.points[a.indices]
    pb = cloud.points[b.indices]
    sa = _subsample(pa, a.indices)
    sb = _subsample(pb, b.indices)
    diff = sa[:, None, :] - sb[None, :, :]
    gap = float(np.sqrt((diff * diff).sum(axis=-1).min()))
    cent = float(np.linalg.norm(pa.mean(axis=0) - pb.mean(axis=0)))

    lo_a, hi_a = pa.min(axis=0) - _BOX_PAD, pa.max(axis=0) + _BOX_PAD
    lo_b, hi_b = pb.min(axis=0) - _BOX_PAD, pb.max(axis=0) + _BOX_PAD
    inter = np.prod(np.maximum(0.0, np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b)))
    union = np.prod(hi_a - lo_a) + np.prod(hi_b - lo_b) - inter
    overlap = float(inter / union) if union > 0 else 0.0

    logit = (
        HEURISTIC_BIAS
        - HEURISTIC_GAP_WEIGHT * gap
        - HEURISTIC_CENTROID_WEIGHT * cent
        + HEURISTIC_OVERLAP_WEIGHT * overlap
    )
    g = 1.0 / (1.0 + np.exp(-logit)) if logit >= 0 else np.exp(logit) / (1.0 + np.exp(logit))
    return float(np.clip(g, PROB_EPS, 1.0 - PROB_EPS))


class HeuristicPredictor(GroupingPredictor):
    """Hand-crafted geometric baseline standing in for similarity-function grouping."""

    def predict(self, cloud: LabeledCloud, a: Segment, b: Segment) -> float:
        return heuristic_predict(cloud, a, b)


def segment_sample(cloud: LabeledCloud, segment: Segment, n: int) -> SampledSegment:
    """Content-seeded sample of a segment, reproducible across processes."""
    return sample_and_pad(cloud, segment, n, seed=content_seed(segment.indices, salt=n))


class NetPredictor(GroupingPredictor):
    """Inference wrapper: content-seeded sampling, joint centering, model forward."""

    def __init__(self, model: PredictorModel):
        self.model = model

    def predict(self, cloud: LabeledCloud, a: Segment, b: Segment) -> float:
        sa = segment_sample(cloud, a, self.model.sample_n)
        sb = segment_sample(cloud, b, self.model.sample_n)
        ca, cb = center_pair(sa, sb)
        return predict_pair(self.model, ca, cb)


def save_model(model: PredictorModel, path) -> None:
    """Versioned text format: header, sample_n, then named row-major tensors."""
    lines = ["RGMODEL 1", f"sample_n {model.sample_n}"]
    for name, p in model.parameters().items():
        arr = p if p.ndim == 2 else p.reshape(1, -1)
        lines.append(f"tensor {name} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join("%.9g" % v for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> PredictorModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != "RGMODEL 1":
        raise ValueError(f"{path}: not a version-1 model file")
    if len(lines) < 2 or not lines[1].startswith("sample_n "):
        raise ValueError(f"{path}: missing sample_n line")
    sample_n = int(lines[1].split()[1])
    tensors: dict[str, np.ndarray] = {}
    i = 2
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if head[0] != "tensor" or len(head) != 4:
            raise ValueError(f"{path}: malformed tensor header at line {i + 1}")
        name, rows, cols = head[1], int(head[2]), int(head[3])
        block = [np.array(lines[i + 1 + r].split(), dtype=np.float64) for r in range(rows)]
        arr = np.vstack(block)
        if arr.shape != (rows, cols):
            raise ValueError(f"{path}: tensor {name} has wrong shape")
        tensors[name] = arr
        i += 1 + rows

    def collect(prefix):
        out = []
        j = 0
        while f"{prefix}{j}" in tensors:
            out.append(tensors[f"{prefix}{j}"])
            j += 1
        return out

    enc_w = collect("enc_w")
    enc_b = [b.reshape(-1) for b in collect("enc_b")]
    mlp_w = collect("mlp_w")
    mlp_b = [b.reshape(-1) for b in collect("mlp_b")]
    if len(enc_w) + len(enc_b) + len(mlp_w) + len(mlp_b) != len(tensors):
        raise ValueError(f"{path}: unexpected tensors in model file")
    # seed is an init-time concern only; inference never consumes it
    return PredictorModel(sample_n, 0, enc_w, enc_b, mlp_w, mlp_b)
