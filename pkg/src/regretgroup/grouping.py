"""Iterative pair grouping with regret scores, a regret pool, and withdrawal.

Each iteration scores all adjacent pairs, takes the top k above the stop
threshold t, and merges them unless their regret score exceeds u, in which
case the pair enters the regret pool and is barred from merging. The regret
score asks the merged pair's other neighbors whether they preferred the
pre-merge segment over the hypothetical union: a large drop means the merge
contradicts the neighborhood and should be withdrawn.

Pairs in the pool are excluded from both selection and the termination
check; without that exclusion a run whose remaining above-threshold pairs
are all pooled would never stop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .adjacency import canonical_pair, merge_adjacency
from .geometry import LabeledCloud, Segment
from .predictor import GroupingPredictor

__all__ = [
    "GroupingConfig",
    "GroupingState",
    "MergeRecord",
    "StepOutcome",
    "Proposal",
    "regret_score",
    "select_candidates",
    "grouping_step",
    "run_grouping",
    "verify_regret_logic",
    "write_proposals",
    "read_proposals",
]


@dataclass(frozen=True)
class GroupingConfig:
    t: float = 0.75  # stop grouping when the best non-pool score is below this
    u: float = 0.5   # regret scores above this send a pair to the pool
    k: int = 3       # pairs grouped per iteration
    regret_enabled: bool = True

    def __post_init__(self):
        if not 0 <= self.t <= 1 or not 0 <= self.u <= 1:
            raise ValueError("t and u must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be at least 1")


@dataclass(frozen=True)
class MergeRecord:
    a: int
    b: int
    d: int
    g: float
    iteration: int


@dataclass(frozen=True)
class StepOutcome:
    terminated: bool
    merged: tuple[MergeRecord, ...]
    regretted: tuple[tuple[tuple[int, int], float], ...]
    candidates: tuple[tuple[tuple[int, int], float], ...]


@dataclass(frozen=True)
class Proposal:
    """A final unmergeable segment plus its ranking score and merge lineage."""

    segment: Segment
    score: float
    provenance: tuple[MergeRecord, ...]


class GroupingState:
    """Mutable state of one grouping run: live segments, pairs, pool, history."""

    def __init__(self, cloud: LabeledCloud, segments: list[Segment], pairs):
        self.cloud = cloud
        self.segments: dict[int, Segment] = {s.id: s for s in segments}
        if len(self.segments) != len(segments):
            raise ValueError("segment ids must be unique")
        self.pairs: set[tuple[int, int]] = {canonical_pair(a, b) for a, b in pairs}
        for a, b in self.pairs:
            if a not in self.segments or b not in self.segments:
                raise ValueError(f"pair ({a}, {b}) references unknown segments")
        self.pool: set[tuple[int, int]] = set()
        self.history: list[MergeRecord] = []
        self.iteration = 0
        self.next_id = max(self.segments, default=-1) + 1
        self._cache: dict[tuple[int, int], float] = {}
        self._provenance: dict[int, tuple[MergeRecord, ...]] = {s.id: () for s in segments}
        sizes = sum(len(s) for s in segments)
        all_idx = (
            np.unique(np.concatenate([s.indices for s in segments]))
            if segments
            else np.empty(0, dtype=np.int64)
        )
        if len(all_idx) != sizes:
            raise ValueError("segments must be pairwise disjoint")
        self._initial_indices = all_idx

    def score(self, predictor: GroupingPredictor, a: int, b: int) -> float:
        """Cached g for a live pair, evaluated in canonical id order."""
        key = canonical_pair(a, b)
        val = self._cache.get(key)
        if val is None:
            val = float(predictor.predict(self.cloud, self.segments[key[0]], self.segments[key[1]]))
            self._cache[key] = val
        return val

    def neighbors(self, sid: int, exclude: int | None = None) -> list[int]:
        out = [b if a == sid else a for a, b in self.pairs if sid in (a, b)]
        if exclude is not None:
            out = [v for v in out if v != exclude]
        return sorted(out)

    def merge(self, a: int, b: int, g: float) -> MergeRecord:
        key = canonical_pair(a, b)
        d = self.next_id
        self.next_id += 1
        union = Segment(d, np.union1d(self.segments[a].indices, self.segments[b].indices))
        del self.segments[a]
        del self.segments[b]
        self.segments[d] = union
        self.pairs = merge_adjacency(self.pairs, a, b, d)
        self.pool = {p for p in self.pool if a not in p and b not in p}
        self._cache = {p: v for p, v in self._cache.items() if a not in p and b not in p}
        rec = MergeRecord(a=key[0], b=key[1], d=d, g=g, iteration=self.iteration)
        self.history.append(rec)
        self._provenance[d] = self._provenance.pop(a) + self._provenance.pop(b) + (rec,)
        return rec

    def check_partition(self) -> None:
        """Live segments must still cover exactly the initial index set."""
        total = sum(len(s) for s in self.segments.values())
        if total != len(self._initial_indices):
            raise AssertionError("partition conservation violated: point count changed")

    def check_partition_full(self) -> None:
        if not self.segments:
            if len(self._initial_indices):
                raise AssertionError("all points lost")
            return
        merged = np.unique(np.concatenate([s.indices for s in self.segments.values()]))
        if merged.size != sum(len(s) for s in self.segments.values()):
            raise AssertionError("live segments overlap")
        if not np.array_equal(merged, self._initial_indices):
            raise AssertionError("live segments do not cover the initial index set")


def regret_score(state: GroupingState, predictor: GroupingPredictor, a: int, b: int) -> float:
    """Neighborhood evidence that merging a and b would be wrong.

    With D the hypothetical union, s1 = max over V adjacent to b (excluding a)
    of g(V, b) - g(V, D); s2 symmetric for a; the score is max(s1, s2). With
    no other neighbors on either side the pair can never be regretted and the
    score is -1.
    """
    key = canonical_pair(a, b)
    if key not in state.pairs:
        raise ValueError(f"pair {key} is not adjacent")
    union = Segment(
        state.next_id,
        np.union1d(state.segments[a].indices, state.segments[b].indices),
    )
    best: float | None = None
    for anchor, partner in ((b, a), (a, b)):
        for v in state.neighbors(anchor, exclude=partner):
            gv = state.score(predictor, v, anchor)
            gd = float(predictor.predict(state.cloud, state.segments[v], union))
            diff = gv - gd
            if best is None or diff > best:
                best = diff
    return -1.0 if best is None else float(best)


def select_candidates(state: GroupingState, predictor: GroupingPredictor, cfg: GroupingConfig):
    """Top k non-pool pairs by score, plus the best non-pool score for the t test.

    Pool members are invisible here: they can neither be selected nor keep
    the loop alive. Ties break toward the smaller canonical pair id.
    """
    scored = []
    for pair in sorted(state.pairs):
        if pair in state.pool:
            continue
        scored.append((pair, state.score(predictor, *pair)))
    if not scored:
        return [], float("-inf")
    scored.sort(key=lambda ps: (-ps[1], ps[0]))
    return scored[: cfg.k], scored[0][1]


def grouping_step(state: GroupingState, predictor: GroupingPredictor, cfg: GroupingConfig) -> StepOutcome:
    """One iteration: select top-k pairs, regret-check each, merge the survivors."""
    state.iteration += 1
    candidates, max_score = select_candidates(state, predictor, cfg)
    if max_score < cfg.t:
        return StepOutcome(True, (), (), tuple(candidates))
    merged: list[MergeRecord] = []
    regretted: list[tuple[tuple[int, int], float]] = []
    for pair, score in candidates:
        a, b = pair
        if a not in state.segments or b not in state.segments:
            continue  # consumed by an earlier merge this iteration
        if cfg.regret_enabled:
            s = regret_score(state, predictor, a, b)
            if s > cfg.u:
                state.pool.add(pair)
                regretted.append((pair, s))
                continue
        merged.append(state.merge(a, b, score))
    return StepOutcome(False, tuple(merged), tuple(regretted), tuple(candidates))


def _trace_record(state: GroupingState, outcome: StepOutcome) -> dict:
    return {
        "iteration": state.iteration,
        "terminated": outcome.terminated,
        "candidates": [[int(a), int(b), s] for (a, b), s in outcome.candidates],
        "merged": [[r.a, r.b, r.d, r.g] for r in outcome.merged],
        "regretted": [[int(a), int(b), s] for (a, b), s in outcome.regretted],
    }


def run_grouping(
    cloud: LabeledCloud,
    segments: list[Segment],
    adjacency,
    predictor: GroupingPredictor,
    cfg: GroupingConfig,
    trace: list | None = None,
) -> list[Proposal]:
    """Iterate grouping steps to completion and emit every live segment as a proposal.

    Proposals are scored by the mean g of the merges in their lineage
    (singletons score 0.0). If trace is a list it receives one JSON-ready
    record per iteration, the terminating check included.
    """
    state = GroupingState(cloud, segments, adjacency)
    n0 = max(len(state.segments), 1)
    ids_ever = 2 * n0 - 1  # every merge kills two ids and mints one
    bound = n0 + ids_ever * (ids_ever - 1) // 2 + 1
    while True:
        outcome = grouping_step(state, predictor, cfg)
        state.check_partition()
        if trace is not None:
            trace.append(_trace_record(state, outcome))
        if outcome.terminated:
            break
        if state.iteration > bound:
            raise AssertionError(f"grouping failed to terminate within {bound} iterations")
    state.check_partition_full()
    proposals = []
    for sid in sorted(state.segments):
        prov = state._provenance[sid]
        score = float(np.mean([r.g for r in prov])) if prov else 0.0
        proposals.append(Proposal(state.segments[sid], score, prov))
    return proposals


def verify_regret_logic(g_a_b: float, g_c_b: float, g_c_d: float, u: float = 0.5) -> bool:
    """Pure form of the contradiction test: regret iff g(C,B) - g(C,D) > u.

    When C surely groups with B but not with the union D, the original merge
    of A and B cannot have been right. g_a_b is carried for context only; the
    decision rests on the neighbor's preference drop.
    """
    for name, val in (("g_a_b", g_a_b), ("g_c_b", g_c_b), ("g_c_d", g_c_d)):
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    return bool(g_c_b - g_c_d > u)


def write_proposals(path, cloud_path: str, proposals: list[Proposal]) -> None:
    doc = {
        "cloud": str(cloud_path),
        "proposals": [
            {"id": int(p.segment.id), "indices": p.segment.indices.tolist(), "score": p.score}
            for p in proposals
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def read_proposals(path) -> tuple[str, list[Proposal]]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    proposals = [
        Proposal(Segment(int(r["id"]), np.asarray(r["indices"], dtype=np.int64)), float(r["score"]), ())
        for r in doc["proposals"]
    ]
    return doc["cloud"], proposals
