"""
Axis-aligned rectangles over the unit cube and kd-tree rectangular partitions.

A partition is an immutable tree of `Split` and `Leaf` nodes. Every node
stores the box it covers; a split at (dim, coord) sends points with
x[dim] < coord to `low` and the rest to `high`. Cells are half-open except on
the top face of the cube, so the leaves of a tree are pairwise disjoint and
cover [0, 1]^d. Payloads are opaque: equality and arithmetic are passed in by
the caller.
"""
import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, NamedTuple, Tuple

import pandas as pd

from .errors import DomainError, GeometryError

# Coordinates produced by shift arithmetic are rounded to this many decimals
# when they are within SNAP_TOL of the rounded value.
COORD_DECIMALS = 12
SNAP_TOL = 1e-14
# Tolerance on the summed leaf volume of a partition
VOLUME_TOL = 1e-12


def snap(coord):
    """Removes floating-point noise left by adding a shift to a coordinate."""
    rounded = round(coord, COORD_DECIMALS)
    if abs(rounded - coord) <= SNAP_TOL:
        return rounded + 0.0  # normalizes -0.0
    return coord


@dataclass(frozen=True)
class Rect:
    """A box [low, high) in [0,1]^d; the upper bound is closed where high == 1."""
    low: Tuple[float, ...]
    high: Tuple[float, ...]

    def __post_init__(self):
        low = tuple(float(v) for v in self.low)
        high = tuple(float(v) for v in self.high)
        if len(low) != len(high) or not low:
            raise DomainError(f"Rect bounds must have the same positive length, got {len(low)} and {len(high)}")
        for i, (lo, hi) in enumerate(zip(low, high)):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise DomainError(f"Rect coordinate {i} is not finite: [{lo}, {hi})")
            if lo < 0.0 or hi > 1.0:
                raise DomainError(f"Rect coordinate {i} leaves the unit cube: [{lo}, {hi})")
            if not lo < hi:
                raise DomainError(f"Rect is empty or degenerate in dimension {i}: [{lo}, {hi})")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def _make(cls, low, high):
        # Trusted constructor for boxes derived from already valid boxes.
        rect = object.__new__(cls)
        object.__setattr__(rect, "low", low)
        object.__setattr__(rect, "high", high)
        return rect

    @classmethod
    def unit(cls, dims):
        return cls._make((0.0,) * dims, (1.0,) * dims)

    @property
    def dims(self):
        return len(self.low)

    def contains(self, x):
        for lo, hi, v in zip(self.low, self.high, x):
            if v < lo:
                return False
            if v >= hi and not (hi == 1.0 and v == 1.0):
                return False
        return True

    def volume(self):
        return math.prod(hi - lo for lo, hi in zip(self.low, self.high))

    def center(self):
        return tuple(0.5 * (lo + hi) for lo, hi in zip(self.low, self.high))

    def intersection(self, other):
        """Returns the common box, or None when the overlap has zero volume."""
        low = tuple(max(a, b) for a, b in zip(self.low, other.low))
        high = tuple(min(a, b) for a, b in zip(self.high, other.high))
        for lo, hi in zip(low, high):
            if not lo < hi:
                return None
        return Rect._make(low, high)

    def issubset(self, other):
        return all(o_lo <= lo and hi <= o_hi for lo, hi, o_lo, o_hi
                   in zip(self.low, self.high, other.low, other.high))

    def split(self, dim, coord):
        """Cuts the box at x[dim] = coord; coord must lie strictly inside."""
        high_of_low = self.high[:dim] + (coord,) + self.high[dim + 1:]
        low_of_high = self.low[:dim] + (coord,) + self.low[dim + 1:]
        return Rect._make(self.low, high_of_low), Rect._make(low_of_high, self.high)

    def to_dict(self):
        return {"low": list(self.low), "high": list(self.high)}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["low"]), tuple(data["high"]))


class Leaf(NamedTuple):
    rect: Rect
    payload: Any


class Split(NamedTuple):
    rect: Rect
    dim: int
    coord: float
    low: Any
    high: Any


class KdPartition:
    """A kd-tree whose leaves partition [0,1]^d."""
    __slots__ = ("root",)

    def __init__(self, root):
        self.root = root

    @property
    def dims(self):
        return self.root.rect.dims

    def leaves(self):
        """Yields leaves depth-first, low side before high side."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                yield node
            else:
                stack.append(node.high)
                stack.append(node.low)

    def __len__(self):
        return sum(1 for _ in self.leaves())

    def locate(self, x):
        return locate(self, x)

    def payload_at(self, x):
        return locate(self, x).payload

    def __repr__(self):
        return f"KdPartition(dims={self.dims}, leaves={len(self)})"


def check_point(x, dims):
    """
    Validates a point of the unit cube.

    Returns:
        tuple: The point as a tuple of floats.
    """
    try:
        point = tuple(float(v) for v in x)
    except (TypeError, ValueError) as e:
        raise DomainError(f"Point must be a sequence of {dims} numbers: {e}")
    if len(point) != dims:
        raise DomainError(f"Point has {len(point)} coordinates, expected {dims}")
    for i, v in enumerate(point):
        if not (0.0 <= v <= 1.0):
            raise DomainError(f"Point coordinate {i} = {v} lies outside [0, 1]")
    return point


def single_leaf(dims, payload):
    """The trivial partition: one leaf covering the whole cube."""
    if dims < 1:
        raise DomainError(f"Partitions need at least one dimension, got {dims}")
    return KdPartition(Leaf(Rect.unit(dims), payload))


def locate(p, x):
    """
    Finds the leaf containing a point.

    Args:
        p (KdPartition): The partition.
        x (sequence): A point of [0,1]^d.

    Returns:
        Leaf: The unique leaf whose rect contains x.
    """
    point = check_point(x, p.dims)
    node = p.root
    while isinstance(node, Split):
        node = node.high if point[node.dim] >= node.coord else node.low
    return node


def _map(node, fn):
    if isinstance(node, Leaf):
        return Leaf(node.rect, fn(node.payload))
    return Split(node.rect, node.dim, node.coord, _map(node.low, fn), _map(node.high, fn))


def _map_rect(node, fn):
    if isinstance(node, Leaf):
        return Leaf(node.rect, fn(node.rect, node.payload))
    return Split(node.rect, node.dim, node.coord, _map_rect(node.low, fn), _map_rect(node.high, fn))


def map_payloads(p, fn):
    return KdPartition(_map(p.root, fn))


def map_leaves(p, fn):
    """Rebuilds p with payloads fn(rect, payload)."""
    return KdPartition(_map_rect(p.root, fn))


def map_node(node, fn):
    """map_payloads for a subtree that need not cover the cube."""
    return _map(node, fn)


def map_node_leaves(node, fn):
    """map_leaves for a subtree that need not cover the cube."""
    return _map_rect(node, fn)


def restrict(node, box, delta=None):
    """
    Restricts a subtree to a box, optionally pulling it back through a shift.

    With delta, the tree is read in source coordinates: a source point x maps
    to x + delta in the tree's coordinates, so each split coordinate c becomes
    c - delta[dim]. The box (in source coordinates) must map inside the
    subtree's box.

    Returns:
        Leaf | Split: A subtree covering exactly `box`.
    """
    while isinstance(node, Split):
        d = node.dim
        c = node.coord
        if delta is not None and delta[d] != 0.0:
            c = snap(c - delta[d])
        if c <= box.low[d]:
            node = node.high
        elif c >= box.high[d]:
            node = node.low
        else:
            lo_box, hi_box = box.split(d, c)
            return Split(box, d, c, restrict(node.low, lo_box, delta), restrict(node.high, hi_box, delta))
    return Leaf(box, node.payload)


def _descend(node, box):
    # skips splits of node that do not cut box
    while isinstance(node, Split):
        if node.coord <= box.low[node.dim]:
            node = node.high
        elif node.coord >= box.high[node.dim]:
            node = node.low
        else:
            break
    return node


def _restrict_map(node, box, fn):
    """restrict(node, box) with fn applied to every payload, in one pass."""
    node = _descend(node, box)
    if isinstance(node, Leaf):
        return Leaf(box, fn(node.payload))
    lo_box, hi_box = box.split(node.dim, node.coord)
    return Split(box, node.dim, node.coord,
                 _restrict_map(node.low, lo_box, fn), _restrict_map(node.high, hi_box, fn))


def _merge(a, b, f):
    # b covers a.rect but may be larger; only its splits that cut a.rect are copied
    b = _descend(b, a.rect)
    if isinstance(b, Leaf):
        pb = b.payload
        return _map(a, lambda pa: f(pa, pb))
    if isinstance(a, Leaf):
        pa = a.payload
        return _restrict_map(b, a.rect, lambda pb: f(pa, pb))
    return Split(a.rect, a.dim, a.coord, _merge(a.low, b, f), _merge(a.high, b, f))


def merge_nodes(a, b, f):
    """Common refinement of two subtrees covering the same box."""
    if a.rect != b.rect:
        raise DomainError(f"Cannot intersect subtrees over different boxes: {a.rect} vs {b.rect}")
    return _merge(a, b, f)


def intersect(p, q, f):
    """
    Common refinement of two partitions (BSP-merge style).

    Args:
        p (KdPartition): First partition, payloads of type A.
        q (KdPartition): Second partition, payloads of type B.
        f (callable): (A, B) -> C.

    Returns:
        KdPartition: Leaves are the nonempty pairwise intersections of the
                     input leaves, each carrying f(payload_p, payload_q).
    """
    if p.dims != q.dims:
        raise DomainError(f"Cannot intersect partitions of dimension {p.dims} and {q.dims}")
    return KdPartition(_merge(p.root, q.root, f))


def _refine(node, r, f, counter):
    box = node.rect
    if box.intersection(r) is None:
        return node
    if isinstance(node, Split):
        return Split(box, node.dim, node.coord,
                     _refine(node.low, r, f, counter), _refine(node.high, r, f, counter))
    if box.issubset(r):
        return Leaf(box, f(node.payload))
    # the leaf straddles a face of r: cut on the first such face, ascending dims, low face first
    for d in range(box.dims):
        for c in (r.low[d], r.high[d]):
            if box.low[d] < c < box.high[d]:
                if counter is not None:
                    counter["splits"] += 1
                lo_box, hi_box = box.split(d, c)
                return Split(box, d, c,
                             _refine(Leaf(lo_box, node.payload), r, f, counter),
                             _refine(Leaf(hi_box, node.payload), r, f, counter))
    raise GeometryError(f"Leaf {box} overlaps {r} without straddling any of its faces")


def refine(p, r, f, counter=None):
    """
    Splits leaves so that r is tiled exactly, then maps the payloads inside r.

    Args:
        p (KdPartition): The partition.
        r (Rect): The refining box.
        f (callable): Payload update applied to leaves inside r.
        counter (collections.Counter, optional): Receives the number of leaf
            splits under the key "splits".

    Returns:
        KdPartition: A partition whose leaves are each inside or outside r.
    """
    if not isinstance(r, Rect):
        raise DomainError(f"refine expects a Rect, got {type(r).__name__}")
    if r.dims != p.dims:
        raise DomainError(f"Rect of dimension {r.dims} cannot refine a partition of dimension {p.dims}")
    return KdPartition(_refine(p.root, r, f, counter))


def shift_clip(r, delta):
    """
    Translates a box and clips it to the unit cube.

    Returns:
        Rect | None: The clipped box, or None when nothing of positive volume
                     remains inside [0,1]^d.
    """
    if len(delta) != r.dims:
        raise DomainError(f"Shift has {len(delta)} components, expected {r.dims}")
    low = []
    high = []
    for lo, hi, d in zip(r.low, r.high, delta):
        d = float(d)
        new_lo = max(0.0, snap(lo + d) if d != 0.0 else lo)
        new_hi = min(1.0, snap(hi + d) if d != 0.0 else hi)
        if not new_lo < new_hi:
            return None
        low.append(new_lo)
        high.append(new_hi)
    return Rect._make(tuple(low), tuple(high))


def source_box(r, delta):
    """
    The part of r whose successor x + delta stays inside the cube, or None.

    The result is half-open like every cell, so for delta > 0 the source
    points landing exactly on the top face x = 1 fall outside it.
    """
    low = []
    high = []
    for lo, hi, d in zip(r.low, r.high, delta):
        d = float(d)
        new_lo = max(lo, snap(-d)) if d < 0.0 else lo
        new_hi = min(hi, snap(1.0 - d)) if d > 0.0 else hi
        if not new_lo < new_hi:
            return None
        low.append(new_lo)
        high.append(new_hi)
    return Rect._make(tuple(low), tuple(high))


def _merge_equal(node, eq):
    if isinstance(node, Leaf):
        return node
    lo = _merge_equal(node.low, eq)
    hi = _merge_equal(node.high, eq)
    if isinstance(lo, Leaf) and isinstance(hi, Leaf) and eq(lo.payload, hi.payload):
        return Leaf(node.rect, lo.payload)
    return Split(node.rect, node.dim, node.coord, lo, hi)


def merge_equal_leaves(p, eq):
    """
    Merges sibling leaves with equal payloads, bottom-up (depth-first).

    Only siblings merge, so the result is still a kd-tree; the merged leaf
    keeps the low sibling's payload.
    """
    return KdPartition(_merge_equal(p.root, eq))


def embed(box, inner_node, outside_payload):
    """
    Builds a subtree over `box` holding `inner_node` on its sub-box and
    `outside_payload` leaves everywhere else.
    """
    inner = inner_node.rect
    for d in range(box.dims):
        if box.low[d] < inner.low[d]:
            lo_box, hi_box = box.split(d, inner.low[d])
            return Split(box, d, inner.low[d], Leaf(lo_box, outside_payload),
                         embed(hi_box, inner_node, outside_payload))
        if inner.high[d] < box.high[d]:
            lo_box, hi_box = box.split(d, inner.high[d])
            return Split(box, d, inner.high[d], embed(lo_box, inner_node, outside_payload),
                         Leaf(hi_box, outside_payload))
    return inner_node


def box_complement(outer, inner):
    """Rects tiling outer minus inner (slab decomposition, at most 2d pieces)."""
    inner = outer.intersection(inner)
    if inner is None:
        return [outer]
    pieces = []
    low = list(outer.low)
    high = list(outer.high)
    for d in range(outer.dims):
        if low[d] < inner.low[d]:
            piece_high = list(high)
            piece_high[d] = inner.low[d]
            pieces.append(Rect._make(tuple(low), tuple(piece_high)))
            low[d] = inner.low[d]
        if inner.high[d] < high[d]:
            piece_low = list(low)
            piece_low[d] = inner.high[d]
            pieces.append(Rect._make(tuple(piece_low), tuple(high)))
            high[d] = inner.high[d]
    return pieces


def _graft(node, fn):
    if isinstance(node, Leaf):
        grafted = fn(node)
        if grafted.rect != node.rect:
            raise GeometryError(f"Grafted subtree covers {grafted.rect}, expected {node.rect}")
        return grafted
    return Split(node.rect, node.dim, node.coord, _graft(node.low, fn), _graft(node.high, fn))


def graft(p, fn):
    """Replaces every leaf by fn(leaf), a subtree covering the leaf's rect."""
    return KdPartition(_graft(p.root, fn))


def from_leaves(dims, items):
    """
    Builds a partition from (rect, payload) records tiling the cube.

    Args:
        dims (int): Dimension of the cube.
        items (iterable): (Rect, payload) pairs.

    Returns:
        KdPartition: A partition whose payload at every point is the payload
                     of the record containing it.

    Raises:
        GeometryError: Records overlap or leave part of the cube uncovered.
    """
    items = list(items)
    if not items:
        raise GeometryError("Cannot build a partition from an empty record list")
    tagged = single_leaf(dims, None)
    for idx, (rect, _) in enumerate(items):
        if rect.dims != dims:
            raise GeometryError(f"Record {idx} has dimension {rect.dims}, expected {dims}")

        def claim(previous, idx=idx):
            if previous is not None:
                raise GeometryError(f"Record {idx} overlaps record {previous}")
            return idx
        tagged = refine(tagged, rect, claim)
    gaps = [leaf.rect for leaf in tagged.leaves() if leaf.payload is None]
    if gaps:
        raise GeometryError(f"Records leave {len(gaps)} region(s) uncovered, first {gaps[0].to_dict()}")
    tagged = merge_equal_leaves(tagged, lambda a, b: a == b)
    return map_payloads(tagged, lambda idx: items[idx][1])


def _default_size(payload):
    try:
        return len(payload)
    except TypeError:
        return 1


def leaf_stats(p, size=None):
    """
    Summarizes a partition.

    Args:
        p (KdPartition): The partition.
        size (callable, optional): Payload size; defaults to len() or 1.

    Returns:
        dict: {'leaves', 'volume', 'max_payload_size', 'vectors'} where
              'vectors' is the summed payload size.
    """
    size = size or _default_size
    volumes = []
    sizes = []
    for leaf in p.leaves():
        volumes.append(leaf.rect.volume())
        sizes.append(size(leaf.payload))
    return {
        "leaves": len(volumes),
        "volume": math.fsum(volumes),
        "max_payload_size": max(sizes),
        "vectors": sum(sizes),
    }


def volume_coverage(p, fraction):
    """Share of the cube covered by the largest `fraction` of leaves by volume."""
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"Fraction must lie in (0, 1], got {fraction}")
    volumes = sorted((leaf.rect.volume() for leaf in p.leaves()), reverse=True)
    count = max(1, math.ceil(fraction * len(volumes)))
    return math.fsum(volumes[:count])


def check_partition(p):
    """
    Structural checks of the kd-tree invariants.

    Returns:
        list: Human-readable problems; empty when the tree is valid.
    """
    problems = []
    if p.root.rect != Rect.unit(p.dims):
        problems.append(f"root covers {p.root.rect.to_dict()}, not the unit cube")
    stack = [(p.root, "root")]
    while stack:
        node, path = stack.pop()
        if isinstance(node, Leaf):
            continue
        box = node.rect
        if not box.low[node.dim] < node.coord < box.high[node.dim]:
            problems.append(f"{path}: split {node.coord} outside ({box.low[node.dim]}, {box.high[node.dim]})")
            continue
        lo_box, hi_box = box.split(node.dim, node.coord)
        if node.low.rect != lo_box or node.high.rect != hi_box:
            problems.append(f"{path}: child boxes differ from the split of the parent box")
        stack.append((node.low, path + ".low"))
        stack.append((node.high, path + ".high"))
    volume = leaf_stats(p, size=lambda _: 1)["volume"]
    if abs(volume - 1.0) > VOLUME_TOL:
        problems.append(f"leaf volumes sum to {volume!r}")
    return problems


def partition_records(p, encode=None):
    """
    Flattens a partition into one record per leaf.

    Args:
        encode (callable, optional): payload -> dict merged into the record.

    Returns:
        list: [{'low': [...], 'high': [...], ...}, ...] in leaf order.
    """
    records = []
    for leaf in p.leaves():
        record = leaf.rect.to_dict()
        if encode is not None:
            record.update(encode(leaf.payload))
        records.append(record)
    return records


def partition_frame(p, columns=None):
    """
    Per-leaf table of a partition: low_i / high_i columns plus payload columns.

    Args:
        columns (callable, optional): payload -> dict of extra columns.

    Returns:
        pandas.DataFrame: One row per leaf.
    """
    rows = []
    for leaf in p.leaves():
        row = {f"low_{i}": v for i, v in enumerate(leaf.rect.low)}
        row.update({f"high_{i}": v for i, v in enumerate(leaf.rect.high)})
        if columns is not None:
            row.update(columns(leaf.payload))
        rows.append(row)
    return pd.DataFrame(rows)


def split_counter():
    """A counter to pass to refine() for split instrumentation."""
    return Counter(splits=0)


