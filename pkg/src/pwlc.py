"""
Piecewise-linear convex functions as finite sets of affine functions.

A PwlcSet {l_i(x) = A_i . x + B_i} represents f(x) = max_i l_i(x) over a
rectangle. Sets are immutable; every operation returns a new set.
"""
import logging
from typing import NamedTuple, Tuple

import numpy as np

from .errors import DomainError, NumericalError
from .linprog import STATUS_OPTIMAL, make_witness_lp, solve_witness

DEFAULT_PRUNE_TOL = 1e-9
DUPLICATE_TOL = 1e-12


class LinearFn(NamedTuple):
    coeffs: Tuple[float, ...]
    offset: float

    def __call__(self, x):
        return float(np.dot(self.coeffs, x) + self.offset)


class PwlcSet:
    """A nonempty set of affine functions stored as a coefficient matrix and offset vector."""
    __slots__ = ("coeffs", "offsets")

    def __init__(self, coeffs, offsets):
        offsets = np.array(offsets, dtype=float).reshape(-1)
        coeffs = np.array(coeffs, dtype=float)
        if len(offsets) == 0:
            raise DomainError("A PWLC set needs at least one linear function")
        coeffs = coeffs.reshape(len(offsets), -1)
        if coeffs.shape[1] == 0:
            raise DomainError("Linear functions need at least one coefficient")
        if not (np.all(np.isfinite(coeffs)) and np.all(np.isfinite(offsets))):
            raise DomainError("Linear function entries must be finite")
        coeffs.flags.writeable = False
        offsets.flags.writeable = False
        self.coeffs = coeffs
        self.offsets = offsets

    @classmethod
    def from_fns(cls, fns):
        fns = list(fns)
        if not fns:
            raise DomainError("A PWLC set needs at least one linear function")
        return cls([fn[0] for fn in fns], [fn[1] for fn in fns])

    @property
    def dims(self):
        return self.coeffs.shape[1]

    @property
    def fns(self):
        return [LinearFn(tuple(float(c) for c in row), float(b)) for row, b in zip(self.coeffs, self.offsets)]

    def __len__(self):
        return len(self.offsets)

    def __iter__(self):
        return iter(self.fns)

    def is_constant(self):
        return not np.any(self.coeffs)

    def to_records(self):
        return [{"coeffs": list(fn.coeffs), "offset": fn.offset} for fn in self.fns]

    @classmethod
    def from_records(cls, records):
        return cls.from_fns((r["coeffs"], r["offset"]) for r in records)

    def __repr__(self):
        return f"PwlcSet({len(self)} fns, d={self.dims})"


def constant(value, dims):
    """The singleton set {value} (zero coefficients)."""
    return PwlcSet(np.zeros((1, dims)), [value])


def zero(dims):
    return constant(0.0, dims)


def evaluate(s, x):
    """
    Evaluates the maximum of the set at a point.

    Returns:
        tuple: (value, index of the first function attaining it).
    """
    values = s.coeffs @ np.asarray(x, dtype=float) + s.offsets
    index = int(np.argmax(values))
    return float(values[index]), index


def evaluate_many(s, points):
    """Values of the set at each row of `points`, shape (n,)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return (points @ s.coeffs.T + s.offsets).max(axis=1)


def cross_sum(a, b):
    """The set {l_i + l_j}, representing the pointwise sum (i-major order)."""
    if a.dims != b.dims:
        raise DomainError(f"Cannot cross-sum sets of dimension {a.dims} and {b.dims}")
    if len(a) == 1 and len(b) == 1:
        return PwlcSet(a.coeffs + b.coeffs, a.offsets + b.offsets)
    coeffs = (a.coeffs[:, None, :] + b.coeffs[None, :, :]).reshape(-1, a.dims)
    offsets = (a.offsets[:, None] + b.offsets[None, :]).reshape(-1)
    return PwlcSet(coeffs, offsets)


def _unique_rows(coeffs, offsets, tol=DUPLICATE_TOL):
    # indices of the first occurrence of every function, in order
    keep = []
    for i in range(len(offsets)):
        duplicate = False
        for j in keep:
            if abs(offsets[i] - offsets[j]) <= tol and np.all(np.abs(coeffs[i] - coeffs[j]) <= tol):
                duplicate = True
                break
        if not duplicate:
            keep.append(i)
    return keep


def union_max(a, b):
    """The set a ∪ b, representing the pointwise maximum, without duplicates."""
    if a.dims != b.dims:
        raise DomainError(f"Cannot take the union of sets of dimension {a.dims} and {b.dims}")
    coeffs = np.vstack([a.coeffs, b.coeffs])
    offsets = np.concatenate([a.offsets, b.offsets])
    keep = _unique_rows(coeffs, offsets)
    return PwlcSet(coeffs[keep], offsets[keep])


def scale(s, c):
    """The set c * s for a probability-like factor c >= 0."""
    c = float(c)
    if not c >= 0.0:
        raise DomainError(f"PWLC sets can only be scaled by nonnegative factors, got {c}")
    if c == 0.0:
        return zero(s.dims)
    if c == 1.0:
        return s
    return PwlcSet(s.coeffs * c, s.offsets * c)


def translate(s, delta):
    """
    Re-expresses a set over successor coordinates as a function of the source.

    Returns:
        PwlcSet: g with g(x) = s(x + delta).
    """
    delta = np.asarray(delta, dtype=float)
    if not np.any(delta):
        return s
    return PwlcSet(s.coeffs, s.offsets + s.coeffs @ delta)


def _box_minimum(coeffs, offset, low, high):
    # minimum of an affine function over a box, coordinate by coordinate
    return float(np.minimum(coeffs * low, coeffs * high).sum() + offset)


def pointwise_dominates(l1, l2, r):
    """
    True iff l1(x) >= l2(x) for every x of the rect r.

    Args:
        l1, l2 (LinearFn): The functions.
        r (Rect): The rectangle.
    """
    low = np.asarray(r.low)
    high = np.asarray(r.high)
    diff = np.asarray(l1.coeffs, dtype=float) - np.asarray(l2.coeffs, dtype=float)
    return _box_minimum(diff, l1.offset - l2.offset, low, high) >= 0.0


def _dominance_filter(coeffs, offsets, low, high):
    # drop functions dominated over the box by another survivor; on mutual
    # dominance (equal over the box) the earlier index stays
    survivors = []
    for j in range(len(offsets)):
        dominated = False
        for i in survivors:
            diff = coeffs[i] - coeffs[j]
            if np.minimum(diff * low, diff * high).sum() + offsets[i] - offsets[j] >= 0.0:
                dominated = True
                break
        if dominated:
            continue
        remaining = []
        for i in survivors:
            diff = coeffs[j] - coeffs[i]
            if np.minimum(diff * low, diff * high).sum() + offsets[j] - offsets[i] >= 0.0:
                continue
            remaining.append(i)
        remaining.append(j)
        survivors = remaining
    return sorted(survivors)


def _witness(candidate, others, coeffs, offsets, low, high):
    lp = make_witness_lp(low, high, coeffs[candidate] - coeffs[others], offsets[candidate] - offsets[others])
    solution = solve_witness(lp)
    if solution.status != STATUS_OPTIMAL:
        raise NumericalError(f"Witness LP returned status {solution.status!r}", index=candidate)
    return solution


def prune(s, r, tol=DEFAULT_PRUNE_TOL):
    """
    Removes functions that never attain the maximum over a rectangle.

    A cheap pairwise dominance filter runs first; the survivors go through a
    Lark-style witness search: the retained set is seeded with the best
    function at the low corner of r, and a candidate is kept only if a
    witness LP finds a point where it beats every retained function by more
    than tol (the best candidate at that point is then retained). A final pass
    drops retained functions that no longer have such a witness.

    Args:
        s (PwlcSet): The set.
        r (Rect): The rectangle the function is defined on.
        tol (float): Dominance tolerance (>= 0).

    Returns:
        PwlcSet: A subset of s, pointwise within tol of s on r.

    Raises:
        NumericalError: An LP failed; carries the index (in s) of the function
                        being tested.
    """
    if tol < 0:
        raise DomainError(f"Prune tolerance must be nonnegative, got {tol}")
    if len(s) == 1:
        return s
    coeffs = s.coeffs
    offsets = s.offsets
    if s.is_constant():
        best = int(np.argmax(offsets))
        return PwlcSet(coeffs[best:best + 1], offsets[best:best + 1])

    low = np.asarray(r.low, dtype=float)
    high = np.asarray(r.high, dtype=float)
    unique = _unique_rows(coeffs, offsets)
    candidates = [unique[i] for i in _dominance_filter(coeffs[unique], offsets[unique], low, high)]
    if len(candidates) == 1:
        return PwlcSet(coeffs[candidates], offsets[candidates])

    # seed with the best function at the low corner (lowest index on ties)
    corner_values = coeffs[candidates] @ low + offsets[candidates]
    seed = candidates[int(np.argmax(corner_values))]
    retained = [seed]
    pending = [c for c in candidates if c != seed]
    lp_count = 0
    while pending:
        candidate = pending[0]
        solution = _witness(candidate, retained, coeffs, offsets, low, high)
        lp_count += 1
        if solution.margin > tol:
            at_witness = coeffs[pending] @ solution.point + offsets[pending]
            winner = pending[int(np.argmax(at_witness))]
            retained.append(winner)
            pending.remove(winner)
        else:
            pending.pop(0)

    retained.sort()
    for candidate in list(retained):
        if len(retained) == 1:
            break
        others = [i for i in retained if i != candidate]
        solution = _witness(candidate, others, coeffs, offsets, low, high)
        lp_count += 1
        if solution.margin <= tol:
            retained = others

    logging.debug(f"Pruned {len(s)} -> {len(retained)} functions with {lp_count} LPs")
    return PwlcSet(coeffs[retained], offsets[retained])


def sets_equal(a, b, tol=DUPLICATE_TOL):
    """Order-insensitive equality of two sets, entry-wise within tol."""
    if len(a) != len(b) or a.dims != b.dims:
        return False
    if len(a) == 1:
        return (abs(a.offsets[0] - b.offsets[0]) <= tol
                and bool(np.all(np.abs(a.coeffs[0] - b.coeffs[0]) <= tol)))
    rows_a = np.column_stack([a.coeffs, a.offsets])
    rows_b = np.column_stack([b.coeffs, b.offsets])
    rows_a = rows_a[np.lexsort(rows_a.T[::-1])]
    rows_b = rows_b[np.lexsort(rows_b.T[::-1])]
    return bool(np.all(np.abs(rows_a - rows_b) <= tol))
