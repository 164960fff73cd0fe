import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regretgroup.adjacency import (
    adjacent_pairs,
    build_grid,
    canonical_pair,
    merge_adjacency,
    voxel_of,
)
from regretgroup.geometry import Aabb, LabeledCloud, Segment

UNIT = Aabb(np.zeros(3), np.ones(3))


class TestVoxelOf:
    def test_direct_arithmetic(self):
        assert voxel_of((0.75, 0.25, 0.25), UNIT, 2) == (1, 0, 0)

    def test_max_corner_clamps(self):
        assert voxel_of((1.0, 1.0, 1.0), UNIT, 4) == (3, 3, 3)

    def test_degenerate_axis_maps_to_zero(self):
        flat = Aabb(np.zeros(3), np.array([1.0, 1.0, 0.0]))
        assert voxel_of((0.5, 0.5, 0.0), flat, 8)[2] == 0

    def test_outside_raises(self):
        with pytest.raises(ValueError):
            voxel_of((1.5, 0.5, 0.5), UNIT, 2)


def grid_for(points, segments, m=8):
    return build_grid(LabeledCloud(points), segments, m)


class TestBuildGrid:
    def test_singleton(self):
        grid = grid_for(np.array([[0.5, 0.5, 0.5]]), [Segment(7, [0])])
        cells = [c for c, ids in grid.cells.items() if 7 in ids]
        assert len(cells) == 1

    def test_separated_segments_share_no_cell(self):
        pts = np.array([[0.0, 0, 0], [1.0, 1, 1]])
        grid = grid_for(pts, [Segment(0, [0]), Segment(1, [1])])
        assert all(len(ids) == 1 for ids in grid.cells.values())

    def test_colocated_segments_share_cell(self):
        pts = np.array([[0.5, 0.5, 0.5], [0.5001, 0.5, 0.5], [0.0, 0, 0]])
        grid = grid_for(pts, [Segment(0, [0, 2]), Segment(1, [1])], m=4)
        assert any(ids >= {0, 1} for ids in grid.cells.values())


class TestAdjacentPairs:
    def test_definition(self):
        pts = np.array([[0.5, 0.5, 0.5], [0.5001, 0.5, 0.5], [0.0, 0.0, 0.0]])
        grid = grid_for(pts, [Segment(0, [0]), Segment(1, [1]), Segment(2, [2])], m=4)
        assert adjacent_pairs(grid) == {(0, 1)}

    def test_complete_pair_set(self):
        cluster = np.tile([[0.9, 0.9, 0.9]], (5, 1)) + np.arange(5)[:, None] * 1e-4
        pts = np.vstack([cluster, [[0.0, 0.0, 0.0]]])
        segments = [Segment(i, [i]) for i in range(6)]
        grid = grid_for(pts, segments, m=2)
        assert adjacent_pairs(grid) == set(itertools.combinations(range(5), 2))

    def test_empty_grid(self):
        grid = grid_for(np.array([[0.0, 0, 0]]), [])
        assert adjacent_pairs(grid) == set()

    @given(st.integers(2, 30), st.integers(2, 8), st.integers(0, 2**31 - 1))
    def test_matches_bruteforce(self, n_points, m, seed):
        r = np.random.default_rng(seed)
        pts = r.uniform(-1, 1, size=(n_points, 3))
        cloud = LabeledCloud(pts)
        split = n_points // 2
        segments = [Segment(0, np.arange(split)), Segment(1, np.arange(split, n_points))]
        grid = build_grid(cloud, segments, m)
        fast = adjacent_pairs(grid)
        cells = {}
        for seg in segments:
            for i in seg.indices:
                cells.setdefault(voxel_of(pts[i], grid.bounds, m), set()).add(seg.id)
        brute = set()
        for ids in cells.values():
            brute |= set(itertools.combinations(sorted(ids), 2))
        assert fast == brute


class TestMergeAdjacency:
    def test_rewrite(self):
        assert merge_adjacency({(0, 1), (1, 2)}, 0, 1, 3) == {(2, 3)}

    def test_duplicate_collapse(self):
        assert merge_adjacency({(0, 1), (0, 2), (1, 2)}, 0, 1, 3) == {(2, 3)}

    def test_isolated_merge(self):
        assert merge_adjacency({(0, 1)}, 0, 1, 2) == set()

    def test_requires_adjacency(self):
        with pytest.raises(ValueError):
            merge_adjacency({(0, 1)}, 0, 2, 3)

    def test_neighbor_union_property(self, rng):
        for _ in range(25):
            n = int(rng.integers(3, 9))
            pairs = set()
            for a, b in itertools.combinations(range(n), 2):
                if rng.random() < 0.5:
                    pairs.add((a, b))
            pairs.add((0, 1))
            merged = merge_adjacency(pairs, 0, 1, n)

            def neighbors(ps, x):
                return {b if a == x else a for a, b in ps if x in (a, b)}

            want = (neighbors(pairs, 0) | neighbors(pairs, 1)) - {0, 1}
            assert neighbors(merged, n) == want
            assert all(0 not in p and 1 not in p for p in merged)


def test_canonical_pair_rejects_self():
    with pytest.raises(ValueError):
        canonical_pair(4, 4)
