"""
Structured dynamic programming over kd-tree partitions.

values[k] is V^k, the value-to-go with k steps remaining; V^0 is zero.
policy[k] is greedy with respect to values[k], i.e. it is the decision rule
for a state with k + 1 steps remaining.
"""
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, NamedTuple, Tuple

import numpy as np
import pandas as pd

from .config import get_settings
from .errors import BudgetExceededError, DomainError, ModelError, ResourceCapError
from .geometry import (Leaf, Rect, embed, from_leaves, graft, intersect, leaf_stats,
                       locate, map_leaves, map_node, map_node_leaves, map_payloads,
                       merge_equal_leaves, merge_nodes, partition_records, restrict,
                       single_leaf, source_box)
from .model import ABSOLUTE
from .pwlc import (DUPLICATE_TOL, PwlcSet, constant, cross_sum, evaluate, prune,
                   scale, sets_equal, translate, union_max, zero)

STATS_COLUMNS = ["stage", "state", "leaves", "vectors", "seconds"]
# Two actions whose values at a point differ by less than this are tied
TIE_TOL = 1e-12


class ValueFunction(NamedTuple):
    stage: int
    partitions: Dict[str, object]  # discrete state -> KdPartition of PwlcSet


class PolicyPayload(NamedTuple):
    """Union of the Q-function sets of one leaf, one action label per linear function."""
    actions: Tuple[str, ...]
    fns: PwlcSet

    def __len__(self):
        return len(self.actions)


class PolicyChoice(NamedTuple):
    action: str
    index: int
    value: float


class Solution(NamedTuple):
    values: list
    stats: pd.DataFrame


def zero_value(m):
    """V^0: one zero leaf per discrete state."""
    return ValueFunction(0, {s: single_leaf(m.dims, zero(m.dims)) for s in m.discrete_states})


def _prune_leaves(p, tol):
    return map_leaves(p, lambda rect, s: prune(s, rect, tol))


def _prune_node(node, tol):
    return map_node_leaves(node, lambda rect, s: prune(s, rect, tol))


def _equality(merge_tol):
    tol = merge_tol if merge_tol and merge_tol > 0 else DUPLICATE_TOL
    return lambda a, b: sets_equal(a, b, tol)


def check_deadline(deadline, where):
    """Raises BudgetExceededError once time.monotonic() passes deadline (None = no deadline)."""
    if deadline is not None and time.monotonic() > deadline:
        raise BudgetExceededError(f"Time budget exceeded during {where}")


def _outcome_tree(box, outcome, v_root, dims, oob_value):
    """The contribution of one relative outcome over a source box, as a subtree."""
    delta = outcome.target
    outside = constant(oob_value * outcome.prob, dims)
    inner = source_box(box, delta)
    if inner is None:
        return Leaf(box, outside)
    shifted = restrict(v_root, inner, delta)
    shifted = map_node(shifted, lambda s: scale(translate(s, delta), outcome.prob))
    return embed(box, shifted, outside)


def _sum_trees(trees, tol, deadline=None):
    # balanced pairwise reduction in a fixed order
    while len(trees) > 1:
        merged = []
        for i in range(0, len(trees) - 1, 2):
            check_deadline(deadline, "outcome sum")
            merged.append(_prune_node(merge_nodes(trees[i], trees[i + 1], cross_sum), tol))
        if len(trees) % 2:
            merged.append(trees[-1])
        trees = merged
    return trees[0]


def sigma_a(v, successor, transition, out_of_bounds_value=0.0, prune_tol=None, merge_tol=0.0, deadline=None):
    """
    Expected next-stage value of one discrete successor, as a function of the source state.

    Source cells are half-open, so a positive shift that lands exactly on
    the top face x = 1 counts as leaving the cube and takes
    out_of_bounds_value. The naive grid counts that face as inside; the two
    differ only on a set of measure zero.

    Args:
        v (ValueFunction): The stage-k value function.
        successor (str): The discrete successor state s'.
        transition (KdPartition): Continuous conditional for (s, a, s'),
            payload OutcomeSet.
        out_of_bounds_value (float): Value of mass shifted outside the cube.
        prune_tol (float, optional): Dominance tolerance.
        deadline (float, optional): time.monotonic() value after which the
            computation aborts; checked once per outcome.

    Returns:
        KdPartition: Payload PwlcSet, pruned per leaf, equal pointwise to
                     sum_i prob_i * V_s'(successor_i(x)).

    Raises:
        BudgetExceededError: The deadline passed.
    """
    prune_tol = get_settings()["prune_tol"] if prune_tol is None else prune_tol
    v_part = v.partitions[successor]
    dims = v_part.dims

    def expand(leaf):
        box = leaf.rect
        outcomes = leaf.payload
        if outcomes.kind == ABSOLUTE:
            total = math.fsum(o.prob * evaluate(locate(v_part, o.target).payload, o.target)[0]
                              for o in outcomes)
            return Leaf(box, constant(total, dims))
        trees = []
        for o in outcomes:
            check_deadline(deadline, f"expected value of {successor}")
            trees.append(_outcome_tree(box, o, v_part.root, dims, out_of_bounds_value))
        return _prune_node(_sum_trees(trees, prune_tol, deadline), prune_tol)

    result = graft(transition, expand)
    return merge_equal_leaves(result, _equality(merge_tol))


def _q_partition(v, m, s, a, prune_tol, merge_tol, deadline):
    entry = m.entries[(s, a)]
    expected = None
    for succ in m.successors(s, a):
        check_deadline(deadline, f"backup of ({s}, {a})")
        sig = sigma_a(v, succ, entry.continuous[succ], m.out_of_bounds_value, prune_tol, merge_tol, deadline)
        # weight by the probability of reaching succ, which varies over the discrete-transition leaves
        weighted = intersect(entry.discrete_transition, sig,
                             lambda dist, f, succ=succ: scale(f, dist.get(succ, 0.0)))
        if expected is None:
            expected = weighted
        else:
            expected = _prune_leaves(intersect(expected, weighted, cross_sum), prune_tol)
    if expected is None:
        expected = single_leaf(m.dims, zero(m.dims))
    q = _prune_leaves(intersect(expected, entry.reward, cross_sum), prune_tol)
    logging.debug(f"Q({s}, {a}): {len(q)} leaves")
    return q


def q_functions(v, m, s, prune_tol=None, merge_tol=0.0, deadline=None):
    """
    Per-action Q partitions of one backup for a discrete state.

    Returns:
        dict: action -> KdPartition of PwlcSet, in declaration order.

    Raises:
        ModelError: No action is applicable in s.
    """
    prune_tol = get_settings()["prune_tol"] if prune_tol is None else prune_tol
    actions = m.applicable_actions(s)
    if not actions:
        raise ModelError(f"No applicable action in discrete state {s!r}")
    return {a: _q_partition(v, m, s, a, prune_tol, merge_tol, deadline) for a in actions}


def _backup_state(v, m, s, prune_tol, merge_tol, deadline):
    started = time.perf_counter()
    q = q_functions(v, m, s, prune_tol, merge_tol, deadline)
    # upper envelope over actions, then drop dominated functions and merge equal siblings
    parts = list(q.values())
    result = parts[0]
    for part in parts[1:]:
        result = intersect(result, part, union_max)
    result = _prune_leaves(result, prune_tol)
    result = merge_equal_leaves(result, _equality(merge_tol))
    return result, time.perf_counter() - started


def _run_states(fn, states, threads):
    if threads and threads > 1 and len(states) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, states))
    return [fn(s) for s in states]


def bellman_backup(v, m, prune_tol=None, merge_tol=0.0, threads=1, deadline=None, timings=None):
    """
    One application of the finite-horizon Bellman equation.

    Args:
        v (ValueFunction): V^k.
        m (HybridMdp): The model.
        threads (int): Discrete states backed up concurrently.
        deadline (float, optional): time.monotonic() value after which the
            backup aborts.
        timings (dict, optional): Receives per-state seconds.

    Returns:
        ValueFunction: V^(k+1).
    """
    prune_tol = get_settings()["prune_tol"] if prune_tol is None else prune_tol
    states = list(m.discrete_states)
    results = _run_states(lambda s: _backup_state(v, m, s, prune_tol, merge_tol, deadline), states, threads)
    partitions = {}
    for s, (part, seconds) in zip(states, results):
        partitions[s] = part
        if timings is not None:
            timings[s] = seconds
    return ValueFunction(v.stage + 1, partitions)


def _stage_rows(v, timings=None):
    rows = []
    for s, part in v.partitions.items():
        stats = leaf_stats(part)
        rows.append({"stage": v.stage, "state": s, "leaves": stats["leaves"],
                     "vectors": stats["vectors"], "seconds": (timings or {}).get(s, 0.0)})
    return rows


def value_iteration(m, horizon=None, prune_tol=None, merge_tol=None, max_vectors=None,
                    time_budget=None, threads=None):
    """
    Applies the Bellman backup `horizon` times from V^0.

    Unset arguments fall back to get_settings(); horizon defaults to the
    model's.

    Returns:
        Solution: values (list of ValueFunction, k = 0..n) and a per-stage
                  stats DataFrame with columns STATS_COLUMNS.

    Raises:
        ResourceCapError: The total number of linear functions of a stage
                          exceeds max_vectors (when > 0).
        BudgetExceededError: time_budget (seconds, when > 0) ran out.
    """
    settings = get_settings()
    horizon = m.horizon if horizon is None else horizon
    prune_tol = settings["prune_tol"] if prune_tol is None else prune_tol
    merge_tol = settings["merge_tol"] if merge_tol is None else merge_tol
    max_vectors = settings["max_vectors"] if max_vectors is None else max_vectors
    time_budget = settings["time_budget"] if time_budget is None else time_budget
    threads = settings["threads"] if threads is None else threads
    if horizon < 0:
        raise DomainError(f"Horizon must be nonnegative, got {horizon}")
    if merge_tol > 0:
        logging.warning(f"Approximate merging enabled (tolerance {merge_tol}); values are no longer exact.")
    deadline = time.monotonic() + time_budget if time_budget > 0 else None

    v = zero_value(m)
    values = [v]
    rows = _stage_rows(v)
    for k in range(1, horizon + 1):
        logging.info(f"Stage {k}/{horizon}: backing up {len(m.discrete_states)} discrete states.")
        timings = {}
        v = bellman_backup(v, m, prune_tol, merge_tol, threads, deadline, timings)
        stage_rows = _stage_rows(v, timings)
        rows.extend(stage_rows)
        values.append(v)
        leaves = sum(r["leaves"] for r in stage_rows)
        vectors = sum(r["vectors"] for r in stage_rows)
        logging.info(f"Stage {k}/{horizon} done: {leaves} leaves, {vectors} vectors, "
                     f"{sum(timings.values()):.3f}s.")
        if max_vectors and vectors > max_vectors:
            per_state = ", ".join(f"{r['state']}={r['vectors']}" for r in stage_rows)
            logging.warning(f"Vector cap {max_vectors} exceeded at stage {k}.")
            raise ResourceCapError(f"Stage {k} holds {vectors} linear functions, above the cap of "
                                   f"{max_vectors} ({per_state})")
    return Solution(values, pd.DataFrame(rows, columns=STATS_COLUMNS))


def extract_policy(values, m, prune_tol=None, threads=1):
    """
    Greedy policies, one per stage.

    Args:
        values (list): ValueFunctions for k = 0..n.
        m (HybridMdp): The model.

    Returns:
        list: n policies; policy[k] maps each discrete state to a KdPartition
              of PolicyPayload, greedy with respect to values[k].
    """
    prune_tol = get_settings()["prune_tol"] if prune_tol is None else prune_tol

    def label(action):
        return lambda s: PolicyPayload((action,) * len(s), s)

    def combine(a, b):
        return PolicyPayload(a.actions + b.actions, PwlcSet(
            np.vstack([a.fns.coeffs, b.fns.coeffs]), np.concatenate([a.fns.offsets, b.fns.offsets])))

    def stage_policy(v):
        policy = {}
        for s in m.discrete_states:
            q = q_functions(v, m, s, prune_tol)
            result = None
            for action, part in q.items():
                labelled = map_payloads(part, label(action))
                result = labelled if result is None else intersect(result, labelled, combine)
            policy[s] = result
        return policy

    return _run_states(stage_policy, values[:-1], threads)


def policy_action(policy, s, x):
    """
    The greedy action at a point; ties go to the earliest declared action.

    Args:
        policy (dict): One stage of extract_policy's output.

    Returns:
        PolicyChoice: action, index of the winning linear function within
                      the leaf payload, and its value.
    """
    if s not in policy:
        raise DomainError(f"Unknown discrete state {s!r}")
    payload = locate(policy[s], x).payload
    point = [float(c) for c in x]
    values = payload.fns.coeffs @ point + payload.fns.offsets
    best = float(values.max())
    index = next(i for i, val in enumerate(values) if val >= best - TIE_TOL)
    return PolicyChoice(payload.actions[index], index, float(values[index]))


def eval_value(values, s, x, k=None):
    """
    V^k_s(x); k defaults to the last stage.

    Raises:
        DomainError: Unknown state or stage, or x outside the cube.
    """
    k = len(values) - 1 if k is None else k
    if not 0 <= k < len(values):
        raise DomainError(f"Stage {k} outside 0..{len(values) - 1}")
    partitions = values[k].partitions
    if s not in partitions:
        raise DomainError(f"Unknown discrete state {s!r}")
    return evaluate(locate(partitions[s], x).payload, x)[0]


# --- Dumps ---

def _fns_records(s):
    return {"linear_fns": s.to_records()}


def values_to_dict(values):
    first = next(iter(values[0].partitions.values()))
    return {
        "dims": first.dims,
        "discrete_states": list(values[0].partitions),
        "stages": [{"stage": v.stage,
                    "partitions": {s: partition_records(p, _fns_records) for s, p in v.partitions.items()}}
                   for v in values],
    }


def save_values(values):
    """Serializes a stage list to the JSON value dump."""
    return json.dumps(values_to_dict(values))


def _partition_from_dump(dims, records, payload):
    return from_leaves(dims, [(Rect(tuple(r["low"]), tuple(r["high"])), payload(r)) for r in records])


def load_values(text):
    """Parses a JSON value dump back into a stage list."""
    doc = json.loads(text)
    dims = doc["dims"]
    return [ValueFunction(stage["stage"], {
        s: _partition_from_dump(dims, records, lambda r: PwlcSet.from_records(r["linear_fns"]))
        for s, records in stage["partitions"].items()}) for stage in doc["stages"]]


def _policy_records(payload):
    return {"actions": list(payload.actions), "linear_fns": payload.fns.to_records()}


def save_policy(policy, dims):
    """Serializes a policy list to the JSON policy dump."""
    return json.dumps({
        "dims": dims,
        "stages": [{"stage": k, "partitions": {s: partition_records(p, _policy_records) for s, p in stage.items()}}
                   for k, stage in enumerate(policy)],
    })


def load_policy(text):
    doc = json.loads(text)
    dims = doc["dims"]

    def payload(r):
        return PolicyPayload(tuple(r["actions"]), PwlcSet.from_records(r["linear_fns"]))

    return [{s: _partition_from_dump(dims, records, payload) for s, records in stage["partitions"].items()}
            for stage in doc["stages"]]
