import math
from unittest.mock import patch

import numpy as np
import pytest

from src.errors import DomainError, GeometryError
from src.geometry import (KdPartition, Leaf, Rect, Split, box_complement, check_partition, embed, from_leaves,
                          graft, intersect, leaf_stats, locate, map_leaves, merge_equal_leaves,
                          partition_frame, partition_records, refine, restrict, shift_clip,
                          single_leaf, snap, source_box, split_counter, volume_coverage)
from tests.factories import random_partition, random_points, random_rects


def _split_half(dims=2, dim=0, coord=0.5, low="L", high="H"):
    box = Rect.unit(dims)
    lo_box, hi_box = box.split(dim, coord)
    return KdPartition(Split(box, dim, coord, Leaf(lo_box, low), Leaf(hi_box, high)))


def _leaf_count_at_points(p, points):
    # brute-force membership: exactly one leaf must contain each point
    counts = []
    leaves = list(p.leaves())
    for x in points:
        counts.append(sum(1 for leaf in leaves if leaf.rect.contains(x)))
    return counts


# --- Rect ---

@pytest.mark.parametrize("low, high", [
    ((0.5,), (0.5,)),
    ((0.6,), (0.4,)),
    ((-0.1,), (0.5,)),
    ((0.0,), (1.5,)),
    ((0.0, 0.0), (1.0,)),
    ((float("nan"),), (1.0,)),
])
def test_rect_rejects_invalid_bounds(low, high):
    with pytest.raises(DomainError):
        Rect(low, high)


def test_rect_membership_is_half_open_with_closed_top():
    r = Rect((0.0, 0.5), (0.5, 1.0))
    assert r.contains((0.0, 0.5))
    assert not r.contains((0.5, 0.7))
    assert r.contains((0.2, 1.0))


def test_rect_intersection_discards_touching_faces():
    a = Rect((0.0,), (0.5,))
    b = Rect((0.5,), (1.0,))
    assert a.intersection(b) is None
    assert Rect((0.2,), (0.7,)).intersection(b) == Rect((0.5,), (0.7,))


# --- locate ---

def test_locate_single_leaf():
    p = single_leaf(2, 7.0)
    assert locate(p, (0.5, 0.5)).payload == 7.0


def test_locate_boundary_goes_to_high_side():
    p = _split_half()
    assert locate(p, (0.5, 0.2)).payload == "H"
    assert locate(p, (0.4999, 0.2)).payload == "L"


def test_locate_top_corner():
    p = _split_half()
    leaf = locate(p, (1.0, 1.0))
    assert leaf.rect.high == (1.0, 1.0)


@pytest.mark.parametrize("x", [(1.2, 0.5), (-0.01, 0.5), (0.5,), ("a", 0.5)])
def test_locate_rejects_points_outside_cube(x):
    with pytest.raises(DomainError):
        locate(single_leaf(2, 0), x)


# --- refine ---

def test_refine_whole_cube_maps_payload_without_split():
    counter = split_counter()
    p = refine(single_leaf(2, 1), Rect.unit(2), lambda v: v + 1, counter)
    assert len(p) == 1
    assert p.payload_at((0.3, 0.3)) == 2
    assert counter["splits"] == 0


def test_refine_one_face():
    p = refine(single_leaf(2, 0), Rect((0.0, 0.0), (0.5, 1.0)), lambda v: 1)
    assert len(p) == 2
    assert p.payload_at((0.25, 0.9)) == 1
    assert p.payload_at((0.75, 0.9)) == 0


def test_refine_inner_box_matches_interval_oracle():
    rng = np.random.default_rng(1)
    r = Rect((0.25, 0.25), (0.75, 0.75))
    p = refine(single_leaf(2, 0), r, lambda v: 1)
    assert check_partition(p) == []
    for x in random_points(rng, 2, 10_000):
        expected = 1 if r.contains(x) else 0
        assert p.payload_at(x) == expected
    assert all(c == 1 for c in _leaf_count_at_points(p, random_points(rng, 2, 500)))


def test_refine_only_splits_straddling_leaves():
    p = _split_half(dims=2, dim=0, coord=0.5, low=0, high=0)
    counter = split_counter()
    # r lies inside the low half; the high leaf must stay whole
    q = refine(p, Rect((0.1, 0.1), (0.4, 0.4)), lambda v: 1, counter)
    assert counter["splits"] == 4
    high_leaves = [leaf for leaf in q.leaves() if leaf.rect.low[0] >= 0.5]
    assert len(high_leaves) == 1


def test_refine_rejects_dimension_mismatch():
    with pytest.raises(DomainError):
        refine(single_leaf(2, 0), Rect((0.0,), (0.5,)), lambda v: v)


# --- intersect ---

def test_intersect_with_trivial_partition_maps_payloads():
    p = _split_half(low=1, high=2)
    q = intersect(p, single_leaf(2, 10), lambda a, b: a + b)
    assert len(q) == 2
    assert q.payload_at((0.1, 0.1)) == 11
    assert q.payload_at((0.9, 0.1)) == 12


def test_intersect_grid_product():
    p = _split_half(dim=0, low=0, high=1)
    q = _split_half(dim=1, low=0, high=2)
    r = intersect(p, q, lambda a, b: a + b)
    assert len(r) == 4
    assert sorted(leaf.payload for leaf in r.leaves()) == [0, 1, 2, 3]


def test_intersect_random_partitions_pointwise():
    rng = np.random.default_rng(7)
    p = random_partition(rng, 3, 20, lambda g, r: int(g.integers(100)))
    q = random_partition(rng, 3, 30, lambda g, r: int(g.integers(100)))
    r = intersect(p, q, lambda a, b: (a, b))
    assert len(r) <= len(p) * len(q)
    assert check_partition(r) == []
    for x in random_points(rng, 3, 10_000):
        assert r.payload_at(x) == (p.payload_at(x), q.payload_at(x))


@patch("src.geometry.restrict", side_effect=AssertionError("intersect must not copy restricted subtrees"))
def test_intersect_walks_the_second_tree_without_copies(mock_restrict):
    rng = np.random.default_rng(17)
    p = random_partition(rng, 2, 40, lambda g, r: int(g.integers(100)))
    # q only splits inside [0, 0.5)^2
    q = refine(single_leaf(2, 0), Rect((0.1, 0.2), (0.4, 0.3)), lambda v: v + 1)
    r = intersect(p, q, lambda a, b: (a, b))
    assert check_partition(r) == []
    assert not mock_restrict.called
    for x in random_points(rng, 2, 2000):
        assert r.payload_at(x) == (p.payload_at(x), q.payload_at(x))


def test_intersect_rejects_dimension_mismatch():
    with pytest.raises(DomainError):
        intersect(single_leaf(1, 0), single_leaf(2, 0), lambda a, b: a)


# --- shift_clip / source_box / restrict ---

def test_shift_clip_zero_shift_is_identity():
    r = Rect((0.2, 0.2), (0.4, 0.4))
    assert shift_clip(r, (0.0, 0.0)) == r


def test_shift_clip_clips_to_cube():
    r = Rect((0.2, 0.2), (0.4, 0.4))
    clipped = shift_clip(r, (-0.3, 0.0))
    assert clipped.low == pytest.approx((0.0, 0.2))
    assert clipped.high == pytest.approx((0.1, 0.4))


def test_shift_clip_fully_outside_is_empty():
    assert shift_clip(Rect((0.2, 0.2), (0.4, 0.4)), (-0.5, 0.0)) is None


def test_shift_clip_round_trip_never_invents_volume():
    rng = np.random.default_rng(3)
    for r in random_rects(rng, 2, 30):
        delta = tuple(rng.uniform(-0.5, 0.5, 2))
        forward = shift_clip(r, delta)
        if forward is None:
            continue
        back = shift_clip(forward, tuple(-d for d in delta))
        if back is not None:
            assert back.issubset(Rect._make(tuple(v - 1e-12 for v in r.low), tuple(v + 1e-12 for v in r.high)))


def test_snap_removes_shift_noise():
    assert snap(0.3 - 0.1) == 0.2
    assert snap(0.123456789) == 0.123456789
    assert math.copysign(1.0, snap(-0.0)) == 1.0


def test_source_box_keeps_points_that_stay_inside():
    r = Rect((0.0,), (1.0,))
    assert source_box(r, (0.25,)) == Rect((0.0,), (0.75,))
    assert source_box(r, (-0.25,)) == Rect((0.25,), (1.0,))
    assert source_box(Rect((0.9,), (1.0,)), (0.2,)) is None


def test_restrict_pulls_back_through_shift():
    p = _split_half(dims=1, coord=0.5, low="L", high="H")
    pulled = restrict(p.root, Rect((0.0,), (0.8,)), (0.2,))
    assert isinstance(pulled, Split)
    assert pulled.coord == pytest.approx(0.3)
    assert pulled.low.payload == "L"
    assert pulled.high.payload == "H"


def test_embed_surrounds_inner_subtree():
    inner = Leaf(Rect((0.2, 0.2), (0.6, 0.6)), "in")
    node = embed(Rect.unit(2), inner, "out")
    p = KdPartition(node)
    assert check_partition(p) == []
    assert p.payload_at((0.3, 0.3)) == "in"
    assert p.payload_at((0.1, 0.3)) == "out"
    assert p.payload_at((0.7, 0.7)) == "out"


# --- merge_equal_leaves ---

def test_merge_equal_leaves_full_collapse():
    p = intersect(_split_half(dim=0, low=7.0, high=7.0), _split_half(dim=1, low=7.0, high=7.0), lambda a, b: a)
    merged = merge_equal_leaves(p, lambda a, b: a == b)
    assert len(merged) == 1
    assert merged.payload_at((0.9, 0.9)) == 7.0


def test_merge_equal_leaves_keeps_different_siblings():
    p = _split_half(low=1.0, high=2.0)
    assert len(merge_equal_leaves(p, lambda a, b: a == b)) == 2


def test_merge_equal_leaves_pointwise_and_idempotent():
    rng = np.random.default_rng(11)
    p = random_partition(rng, 2, 40, lambda g, r: int(g.integers(2)))
    eq = lambda a, b: a == b
    merged = merge_equal_leaves(p, eq)
    assert len(merged) <= len(p)
    assert len(merge_equal_leaves(merged, eq)) == len(merged)
    for x in random_points(rng, 2, 10_000):
        assert merged.payload_at(x) == p.payload_at(x)


# --- from_leaves / box_complement / graft ---

def test_from_leaves_detects_overlap_and_gap():
    with pytest.raises(GeometryError):
        from_leaves(1, [(Rect((0.0,), (0.6,)), 0), (Rect((0.5,), (1.0,)), 1)])
    with pytest.raises(GeometryError):
        from_leaves(1, [(Rect((0.0,), (0.4,)), 0), (Rect((0.5,), (1.0,)), 1)])


def test_box_complement_tiles_the_rest():
    outer = Rect.unit(2)
    inner = Rect((0.3, 0.2), (0.6, 0.9))
    pieces = box_complement(outer, inner)
    assert len(pieces) == 4
    p = from_leaves(2, [(inner, "in")] + [(piece, "out") for piece in pieces])
    assert p.payload_at((0.4, 0.5)) == "in"
    assert p.payload_at((0.1, 0.5)) == "out"


def test_graft_rejects_subtree_over_wrong_box():
    with pytest.raises(GeometryError):
        graft(single_leaf(1, 0), lambda leaf: Leaf(Rect((0.0,), (0.5,)), 0))


def test_map_leaves_sees_rects():
    p = map_leaves(_split_half(dims=1), lambda rect, payload: rect.volume())
    assert sorted(leaf.payload for leaf in p.leaves()) == [0.5, 0.5]


# --- stats and records ---

def test_leaf_stats_single_leaf():
    stats = leaf_stats(single_leaf(3, [1, 2]))
    assert stats["leaves"] == 1
    assert stats["volume"] == 1.0
    assert stats["max_payload_size"] == 2


def test_leaf_stats_quadrants():
    p = intersect(_split_half(dim=0, low=0, high=1), _split_half(dim=1, low=0, high=1), lambda a, b: a)
    assert [leaf.rect.volume() for leaf in p.leaves()] == [0.25] * 4
    assert leaf_stats(p)["volume"] == pytest.approx(1.0, abs=1e-12)


def test_volume_coverage_counts_largest_leaves():
    p = refine(single_leaf(1, 0), Rect((0.0,), (0.1,)), lambda v: 1)
    assert volume_coverage(p, 0.5) == pytest.approx(0.9)
    with pytest.raises(DomainError):
        volume_coverage(p, 0.0)


def test_partition_records_and_frame_have_one_row_per_leaf():
    rng = np.random.default_rng(5)
    p = random_partition(rng, 2, 12, lambda g, r: float(g.random()))
    records = partition_records(p, lambda v: {"value": v})
    frame = partition_frame(p, lambda v: {"value": v})
    assert len(records) == len(p) == len(frame)
    assert list(frame.columns) == ["low_0", "low_1", "high_0", "high_1", "value"]
