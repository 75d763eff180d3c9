"""
Naive uniform-grid value iteration.

Cell (i_1, ..., i_d) of a resolution-r grid covers [i/r, (i+1)/r) in every
dimension (closed on the top face of the cube). Every quantity is evaluated
at the cell center: rewards, transition regions, and landing points of
outcomes, which read the cell that contains them.
"""
import logging
import time
from typing import NamedTuple

import numpy as np
import pandas as pd
import scipy.sparse as sparse

from .config import get_settings
from .errors import DomainError, ModelError, ResourceCapError
from .geometry import check_point
from .model import ABSOLUTE
from .solver import STATS_COLUMNS, check_deadline


class GridSolution(NamedTuple):
    resolution: int
    values: list   # stage k -> {state: ndarray of shape (r,) * d}
    policy: list   # stage k -> {state: ndarray of action indices}, greedy w.r.t. values[k]
    actions: tuple
    stats: pd.DataFrame


def cell_centers(resolution, dims):
    """Centers of all cells in C order, shape (resolution**dims, dims)."""
    index = np.indices((resolution,) * dims).reshape(dims, -1).T
    return (index + 0.5) / resolution


def _cell_of(points, resolution):
    # flat cell index of points inside the cube (top face belongs to the last cell)
    cells = np.minimum(np.floor(points * resolution).astype(np.int64), resolution - 1)
    return np.ravel_multi_index(cells.T, (resolution,) * points.shape[1])


def _leaf_index(p, points):
    """Index (in leaf order) of the leaf of p containing each point, plus the leaves."""
    leaves = list(p.leaves())
    index = np.full(len(points), -1, dtype=np.int64)
    for i, leaf in enumerate(leaves):
        low = np.asarray(leaf.rect.low)
        high = np.asarray(leaf.rect.high)
        inside = np.all(points >= low, axis=1) & np.all((points < high) | ((high == 1.0) & (points == 1.0)), axis=1)
        index[inside] = i
    return index, leaves


def _reward_at(p, points):
    index, leaves = _leaf_index(p, points)
    values = np.empty(len(points))
    for i, leaf in enumerate(leaves):
        mask = index == i
        if np.any(mask):
            s = leaf.payload
            values[mask] = (points[mask] @ s.coeffs.T + s.offsets).max(axis=1)
    return values


def _transition(entry, succ, centers, resolution, deadline=None):
    """
    Sparse weights W (cells x cells) and out-of-bounds mass (cells,) for one successor.

    W[i, j] is the probability that the center of cell i moves to discrete
    state succ and into cell j.
    """
    n = len(centers)
    disc_index, disc_leaves = _leaf_index(entry.discrete_transition, centers)
    disc_prob = np.array([disc_leaves[i].payload.get(succ, 0.0) for i in disc_index])
    out_index, out_leaves = _leaf_index(entry.continuous[succ], centers)

    rows, cols, data = [], [], []
    oob = np.zeros(n)
    for i, leaf in enumerate(out_leaves):
        source = np.flatnonzero(out_index == i)
        if len(source) == 0:
            continue
        for o in leaf.payload:
            check_deadline(deadline, f"grid transitions of ({entry.state}, {entry.action}) to {succ}")
            target = np.asarray(o.target)
            landing = np.broadcast_to(target, (len(source), len(target))) if o.kind == ABSOLUTE \
                else centers[source] + target
            inside = np.all((landing >= 0.0) & (landing <= 1.0), axis=1)
            weight = disc_prob[source] * o.prob
            rows.append(source[inside])
            cols.append(_cell_of(landing[inside], resolution))
            data.append(weight[inside])
            oob[source[~inside]] += weight[~inside]
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        data = np.concatenate(data)
    w = sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    return w, oob


def _transition_size(m, s, a, n):
    # stored weights of (s, a): every cell may reach one cell per outcome of its leaf
    entry = m.entries[(s, a)]
    return sum(n * max(len(leaf.payload) for leaf in entry.continuous[succ].leaves())
               for succ in m.successors(s, a))


def grid_value_iteration(m, resolution, horizon=None, max_cells=None, time_budget=None):
    """
    Value iteration on a uniform grid, evaluated at cell centers.

    Args:
        m (HybridMdp): The model.
        resolution (int): Cells per dimension (>= 1).
        horizon (int, optional): Defaults to the model's horizon.
        max_cells (int, optional): Cap on resolution**d * |S| and on the
            transition entries of each (state, action), cells times
            outcomes; defaults to the SCDP_MAX_CELLS setting.
        time_budget (float, optional): Seconds; 0 = unlimited. Checked
            while the transitions are built and at every stage.

    Returns:
        GridSolution: Values for k = 0..n, greedy policies for k = 0..n-1,
                      and a stats DataFrame with the solver's columns.

    Raises:
        ResourceCapError: The grid or a transition table exceeds max_cells.
        BudgetExceededError: The time budget ran out.
    """
    settings = get_settings()
    horizon = m.horizon if horizon is None else horizon
    max_cells = settings["max_cells"] if max_cells is None else max_cells
    time_budget = settings["time_budget"] if time_budget is None else time_budget
    if resolution < 1:
        raise DomainError(f"Resolution must be at least 1, got {resolution}")
    n = resolution ** m.dims
    total = n * len(m.discrete_states)
    if max_cells and total > max_cells:
        logging.warning(f"Grid of {total} cells exceeds the cap of {max_cells}.")
        raise ResourceCapError(f"Grid with resolution {resolution} in {m.dims} dimensions has {total} "
                               f"cells over {len(m.discrete_states)} discrete states, above the cap of {max_cells}")
    deadline = time.monotonic() + time_budget if time_budget > 0 else None

    centers = cell_centers(resolution, m.dims)
    shape = (resolution,) * m.dims
    built = time.perf_counter()
    tables = {}
    for s in m.discrete_states:
        actions = m.applicable_actions(s)
        if not actions:
            raise ModelError(f"No applicable action in discrete state {s!r}")
        tables[s] = []
        for a in actions:
            size = _transition_size(m, s, a, n)
            if max_cells and size > max_cells:
                logging.warning(f"Grid transitions of ({s}, {a}) need {size} entries, above the cap of {max_cells}.")
                raise ResourceCapError(f"Grid with resolution {resolution} needs {size} transition entries for "
                                       f"({s}, {a}), above the cap of {max_cells}")
            entry = m.entries[(s, a)]
            reward = _reward_at(entry.reward, centers)
            moves = {}
            for succ in m.successors(s, a):
                moves[succ] = _transition(entry, succ, centers, resolution, deadline)
            tables[s].append((m.actions.index(a), reward, moves))
    logging.info(f"Built grid model: resolution {resolution}, {n} cells per state, "
                 f"{time.perf_counter() - built:.3f}s.")

    values = [{s: np.zeros(n) for s in m.discrete_states}]
    policy = []
    rows = [{"stage": 0, "state": s, "leaves": n, "vectors": n, "seconds": 0.0} for s in m.discrete_states]
    for k in range(1, horizon + 1):
        check_deadline(deadline, f"grid stage {k}")
        previous = values[-1]
        stage_values = {}
        stage_policy = {}
        for s in m.discrete_states:
            started = time.perf_counter()
            q = []
            labels = []
            for action_index, reward, moves in tables[s]:
                # r + sum over successors of W V_succ, plus the mass that leaves the cube
                expected = reward.copy()
                for succ, (w, oob) in moves.items():
                    expected += w @ previous[succ] + oob * m.out_of_bounds_value
                q.append(expected)
                labels.append(action_index)
            q = np.vstack(q)
            best = np.argmax(q, axis=0)
            stage_values[s] = q[best, np.arange(n)]
            stage_policy[s] = np.asarray(labels)[best].reshape(shape)
            rows.append({"stage": k, "state": s, "leaves": n, "vectors": n,
                         "seconds": time.perf_counter() - started})
        values.append(stage_values)
        policy.append(stage_policy)
        logging.info(f"Grid stage {k}/{horizon} done.")

    values = [{s: table.reshape(shape) for s, table in stage.items()} for stage in values]
    return GridSolution(resolution, values, policy, tuple(m.actions), pd.DataFrame(rows, columns=STATS_COLUMNS))


def grid_lookup(table, x):
    """Value (or policy label) of the grid cell containing x."""
    resolution = table.shape[0]
    point = np.asarray([check_point(x, table.ndim)])
    cell = np.minimum(np.floor(point * resolution).astype(np.int64), resolution - 1)[0]
    return table[tuple(cell)]


def grid_action(solution, s, x, k):
    """Greedy action name of the naive solver at stage k."""
    return solution.actions[int(grid_lookup(solution.policy[k][s], x))]


def grid_frame(solution, k=None):
    """
    Cell-center value table of one stage (the last by default).

    Returns:
        pandas.DataFrame: state, center_0..center_{d-1}, value.
    """
    k = len(solution.values) - 1 if k is None else k
    frames = []
    for s, table in solution.values[k].items():
        centers = cell_centers(solution.resolution, table.ndim)
        frame = pd.DataFrame(centers, columns=[f"center_{i}" for i in range(table.ndim)])
        frame.insert(0, "state", s)
        frame["value"] = table.reshape(-1)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
