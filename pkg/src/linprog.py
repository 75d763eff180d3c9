"""
Dense bounded-variable primal simplex for witness linear programs.

A witness LP asks for the point of a box where the smallest of a set of
affine functions is as large as possible:

    maximize m  subject to  g_k . x + o_k >= m  for every row k,
                            low <= x <= high.

Substituting y = x - low and m = m0 + t, where m0 is the smallest row value
at x = low, gives a problem whose slack basis is feasible at y = 0, t = 0, so
no phase one is needed. Entering and leaving variables follow Bland's rule.
"""
import logging
from typing import NamedTuple

import numpy as np

from .errors import DomainError, NumericalError

PIVOT_TOL = 1e-10
FEASIBILITY_TOL = 1e-9
MAX_ITERATIONS = 10_000

STATUS_OPTIMAL = "optimal"
STATUS_UNBOUNDED = "unbounded-guard"


class WitnessLp(NamedTuple):
    low: np.ndarray        # (d,)
    high: np.ndarray       # (d,)
    gradients: np.ndarray  # (k, d)
    offsets: np.ndarray    # (k,)


class WitnessSolution(NamedTuple):
    status: str
    margin: float
    point: np.ndarray
    iterations: int


def make_witness_lp(low, high, gradients, offsets):
    """
    Builds and validates a witness LP.

    Args:
        low, high (array-like): Box bounds, shape (d,).
        gradients (array-like): Row gradients, shape (k, d).
        offsets (array-like): Row offsets, shape (k,).

    Returns:
        WitnessLp: The validated problem with float64 arrays.
    """
    low = np.asarray(low, dtype=float).reshape(-1)
    high = np.asarray(high, dtype=float).reshape(-1)
    offsets = np.asarray(offsets, dtype=float).reshape(-1)
    gradients = np.asarray(gradients, dtype=float).reshape(len(offsets), len(low))
    if len(offsets) < 1:
        raise DomainError("A witness LP needs at least one constraint row")
    if low.shape != high.shape:
        raise DomainError(f"Box bounds have shapes {low.shape} and {high.shape}")
    if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
        raise DomainError("Box bounds must be finite")
    if not np.all(low < high):
        raise DomainError(f"Box bounds must satisfy low < high, got {low} and {high}")
    if not (np.all(np.isfinite(gradients)) and np.all(np.isfinite(offsets))):
        raise DomainError("Constraint rows must be finite")
    return WitnessLp(low, high, gradients, offsets)


def solve_witness(lp):
    """
    Solves a witness LP.

    Args:
        lp (WitnessLp): The problem (see make_witness_lp).

    Returns:
        WitnessSolution: On 'optimal', margin is the optimal m and point a
                         maximizer inside the box. On 'unbounded-guard' the
                         margin is +inf; this cannot happen on a valid box and
                         callers treat it as an internal error.

    Raises:
        NumericalError: Iteration cap exceeded or the returned point fails
                        the feasibility re-check.
    """
    if not isinstance(lp, WitnessLp):
        lp = make_witness_lp(*lp)
    low, high, grads, offs = lp
    k, d = grads.shape
    upper_y = high - low
    rhs_base = offs + grads @ low
    m0 = float(rhs_base.min())

    n = d + 1 + k                     # y_0..y_{d-1}, t, slack_0..slack_{k-1}
    t_col = d
    tableau = np.zeros((k, n))
    tableau[:, :d] = -grads
    tableau[:, t_col] = 1.0
    tableau[:, d + 1:] = np.eye(k)
    upper = np.full(n, np.inf)
    upper[:d] = upper_y
    cost = np.zeros(n)
    cost[t_col] = 1.0

    basis = list(range(d + 1, n))
    basic_values = rhs_base - m0
    at_upper = np.zeros(n, dtype=bool)
    is_basic = np.zeros(n, dtype=bool)
    is_basic[basis] = True

    iterations = 0
    while True:
        reduced = cost - cost[basis] @ tableau
        entering = -1
        for j in range(n):
            if is_basic[j]:
                continue
            if (not at_upper[j] and reduced[j] > PIVOT_TOL) or (at_upper[j] and reduced[j] < -PIVOT_TOL):
                entering = j
                break
        if entering < 0:
            break
        iterations += 1
        if iterations > MAX_ITERATIONS:
            raise NumericalError(f"Simplex exceeded {MAX_ITERATIONS} iterations")

        direction = -1.0 if at_upper[entering] else 1.0
        column = direction * tableau[:, entering]
        step = upper[entering]        # a bound flip of the entering variable
        leave_row = -1
        for i in range(k):
            a = column[i]
            var = basis[i]
            if a > PIVOT_TOL:
                ratio = basic_values[i] / a
            elif a < -PIVOT_TOL and np.isfinite(upper[var]):
                ratio = (upper[var] - basic_values[i]) / -a
            else:
                continue
            ratio = max(ratio, 0.0)
            if ratio < step - PIVOT_TOL or (leave_row >= 0 and abs(ratio - step) <= PIVOT_TOL and var < basis[leave_row]):
                step = ratio
                leave_row = i
        if not np.isfinite(step):
            logging.debug("Witness LP reported unbounded; returning guard status.")
            return WitnessSolution(STATUS_UNBOUNDED, float("inf"), low.copy(), iterations)

        basic_values = basic_values - step * column
        if leave_row < 0:
            at_upper[entering] = not at_upper[entering]
            continue

        leaving = basis[leave_row]
        entering_value = (upper[entering] if at_upper[entering] else 0.0) + direction * step
        basic_values[leave_row] = entering_value
        pivot = tableau[leave_row, entering]
        tableau[leave_row] /= pivot
        for i in range(k):
            if i != leave_row and tableau[i, entering] != 0.0:
                tableau[i] -= tableau[i, entering] * tableau[leave_row]
        at_upper[leaving] = column[leave_row] < 0.0
        is_basic[leaving] = False
        is_basic[entering] = True
        at_upper[entering] = False
        basis[leave_row] = entering

    values = np.where(at_upper, upper, 0.0)
    values[basis] = basic_values
    y = values[:d]
    margin = m0 + float(values[t_col])
    if np.any(y < -FEASIBILITY_TOL) or np.any(y > upper_y + FEASIBILITY_TOL):
        raise NumericalError(f"Simplex returned a point outside the box: y={y}")
    point = np.clip(low + y, low, high)
    row_values = grads @ point + offs
    if np.any(row_values < margin - FEASIBILITY_TOL):
        raise NumericalError(
            f"Simplex solution violates a constraint by {float(margin - row_values.min()):.3e}")
    logging.debug(f"Witness LP solved in {iterations} iterations (k={k}, d={d}), margin={margin:.6g}")
    return WitnessSolution(STATUS_OPTIMAL, margin, point, iterations)
