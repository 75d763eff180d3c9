"""
Hybrid discrete-continuous MDP models: outcome sets, transition and reward
partitions per (discrete state, action), validation and the JSON document
format.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Tuple

from jsonschema import Draft202012Validator

from .config import DATA_DIR
from .errors import DomainError, ModelError
from .geometry import (KdPartition, Rect, check_partition, from_leaves,
                       partition_records, single_leaf)
from .pwlc import PwlcSet, constant

RELATIVE = "relative"
ABSOLUTE = "absolute"
PROB_TOL = 1e-9
SCHEMA_PATH = DATA_DIR / "model.schema.json"


class Outcome(NamedTuple):
    kind: str
    target: Tuple[float, ...]
    prob: float


class OutcomeSet(NamedTuple):
    outcomes: Tuple[Outcome, ...]

    @property
    def kind(self):
        return self.outcomes[0].kind

    def __len__(self):
        return len(self.outcomes)

    def __iter__(self):
        return iter(self.outcomes)


def relative(delta, prob=1.0):
    return Outcome(RELATIVE, tuple(float(v) for v in delta), float(prob))


def absolute(target, prob=1.0):
    return Outcome(ABSOLUTE, tuple(float(v) for v in target), float(prob))


def outcome_set(*outcomes):
    return OutcomeSet(tuple(outcomes))


@dataclass(frozen=True)
class ModelEntry:
    """Reward and transition model of one (discrete state, action) pair."""
    state: str
    action: str
    reward: KdPartition                      # payload PwlcSet
    discrete_transition: KdPartition         # payload {successor: prob}
    continuous: Dict[str, KdPartition]       # successor -> payload OutcomeSet
    applicable: bool = True


@dataclass
class HybridMdp:
    dims: int
    discrete_states: Tuple[str, ...]
    actions: Tuple[str, ...]
    entries: Dict[Tuple[str, str], ModelEntry]
    horizon: int
    out_of_bounds_value: float = 0.0
    metadata: dict = field(default_factory=dict)

    def entry(self, state, action):
        return self.entries.get((state, action))

    def applicable_actions(self, state):
        """Actions applicable in a discrete state, in declaration order."""
        return [a for a in self.actions
                if (state, a) in self.entries and self.entries[(state, a)].applicable]

    def successors(self, state, action):
        """Discrete successors reached with positive probability somewhere, in declaration order."""
        entry = self.entries[(state, action)]
        reached = set()
        for leaf in entry.discrete_transition.leaves():
            reached.update(s for s, p in leaf.payload.items() if p > 0.0)
        return [s for s in self.discrete_states if s in reached]


def make_entry(state, action, reward, continuous, discrete_transition=None, applicable=True):
    """
    Convenience constructor for programmatic models.

    Args:
        reward (KdPartition | PwlcSet | float): A reward partition, or a value
            used over the whole cube.
        continuous (dict): successor -> KdPartition of OutcomeSet (or a bare
            OutcomeSet used over the whole cube).
        discrete_transition (KdPartition | dict, optional): Defaults to the
            single successor of `continuous` with probability 1.
    """
    dims = None
    for part in continuous.values():
        if isinstance(part, KdPartition):
            dims = part.dims
            break
        dims = len(part.outcomes[0].target)
    if not isinstance(reward, KdPartition):
        if not isinstance(reward, PwlcSet):
            reward = constant(float(reward), dims)
        reward = single_leaf(dims, reward)
    continuous = {s: part if isinstance(part, KdPartition) else single_leaf(dims, part)
                  for s, part in continuous.items()}
    if discrete_transition is None:
        if len(continuous) != 1:
            raise DomainError("A discrete transition is required when there are several successors")
        discrete_transition = {next(iter(continuous)): 1.0}
    if not isinstance(discrete_transition, KdPartition):
        discrete_transition = single_leaf(dims, dict(discrete_transition))
    return ModelEntry(state, action, reward, discrete_transition, continuous, applicable)


def _fmt(value):
    return f"{value:.12g}"


def _leaf_label(index, leaf):
    return f"leaf {index} {list(leaf.rect.low)}-{list(leaf.rect.high)}"


def _check_outcome_set(path, outcomes, dims):
    violations = []
    if not isinstance(outcomes, OutcomeSet) or len(outcomes) == 0:
        return [f"{path}: outcome set is empty"]
    kinds = {o.kind for o in outcomes}
    if len(kinds) > 1:
        violations.append(f"{path}: mixes relative and absolute outcomes")
    total = 0.0
    for i, o in enumerate(outcomes):
        if o.kind not in (RELATIVE, ABSOLUTE):
            violations.append(f"{path} outcome {i}: unknown kind {o.kind!r}")
            continue
        if not (0.0 < o.prob <= 1.0):
            violations.append(f"{path} outcome {i}: probability {_fmt(o.prob)} outside (0, 1]")
        total += o.prob
        if len(o.target) != dims:
            violations.append(f"{path} outcome {i}: target has {len(o.target)} coordinates, expected {dims}")
            continue
        if not all(math.isfinite(v) for v in o.target):
            violations.append(f"{path} outcome {i}: target is not finite")
            continue
        bound_low, bound_high = (0.0, 1.0) if o.kind == ABSOLUTE else (-1.0, 1.0)
        if any(v < bound_low or v > bound_high for v in o.target):
            violations.append(f"{path} outcome {i}: {o.kind} target {list(o.target)} outside "
                              f"[{_fmt(bound_low)}, {_fmt(bound_high)}]^{dims}")
    if abs(total - 1.0) > PROB_TOL:
        violations.append(f"{path}: probabilities sum to {_fmt(total)}")
    return violations


def _check_structure(path, part, dims):
    if not isinstance(part, KdPartition):
        return [f"{path}: not a partition"]
    if part.dims != dims:
        return [f"{path}: partition has dimension {part.dims}, expected {dims}"]
    return [f"{path}: {problem}" for problem in check_partition(part)]


def validate(m):
    """
    Checks every model invariant.

    Args:
        m (HybridMdp): The model.

    Returns:
        list: Violations as "path: message" strings; empty when valid.
    """
    violations = []
    if not isinstance(m.dims, int) or m.dims < 1:
        return [f"dims: must be a positive integer, got {m.dims!r}"]
    if not isinstance(m.horizon, int) or m.horizon < 1:
        violations.append(f"horizon: must be a positive integer, got {m.horizon!r}")
    if not math.isfinite(m.out_of_bounds_value):
        violations.append("out_of_bounds_value: must be finite")
    for name, items in (("discrete_states", m.discrete_states), ("actions", m.actions)):
        if not items:
            violations.append(f"{name}: must not be empty")
        if len(set(items)) != len(items):
            violations.append(f"{name}: contains duplicates")
    states = set(m.discrete_states)
    actions = set(m.actions)

    for (s, a), entry in m.entries.items():
        path = f"entries[{s}/{a}]"
        if s not in states:
            violations.append(f"{path}: unknown discrete state {s!r}")
        if a not in actions:
            violations.append(f"{path}: unknown action {a!r}")
        if not entry.applicable:
            continue

        reward_problems = _check_structure(f"{path}.reward", entry.reward, m.dims)
        violations.extend(reward_problems)
        if not reward_problems:
            for i, leaf in enumerate(entry.reward.leaves()):
                if not isinstance(leaf.payload, PwlcSet) or leaf.payload.dims != m.dims:
                    violations.append(f"{path}.reward {_leaf_label(i, leaf)}: payload is not a "
                                      f"{m.dims}-dimensional set of linear functions")

        reached = set()
        disc_problems = _check_structure(f"{path}.discrete_transition", entry.discrete_transition, m.dims)
        violations.extend(disc_problems)
        if not disc_problems:
            for i, leaf in enumerate(entry.discrete_transition.leaves()):
                label = f"{path}.discrete_transition {_leaf_label(i, leaf)}"
                dist = leaf.payload
                if not isinstance(dist, dict) or not dist:
                    violations.append(f"{label}: successor distribution is empty")
                    continue
                for succ, prob in dist.items():
                    if succ not in states:
                        violations.append(f"{label}: unknown successor state {succ!r}")
                    if not (0.0 <= prob <= 1.0):
                        violations.append(f"{label}: probability {_fmt(prob)} of {succ!r} outside [0, 1]")
                    if prob > 0.0:
                        reached.add(succ)
                total = math.fsum(dist.values())
                if abs(total - 1.0) > PROB_TOL:
                    violations.append(f"{label}: probabilities sum to {_fmt(total)}")

        for succ in sorted(reached):
            if succ not in entry.continuous:
                violations.append(f"{path}: missing continuous conditional for ({s}, {a}, {succ})")
        for succ, part in entry.continuous.items():
            cpath = f"{path}.continuous[{succ}]"
            if succ not in states:
                violations.append(f"{cpath}: unknown successor state {succ!r}")
            problems = _check_structure(cpath, part, m.dims)
            violations.extend(problems)
            if problems:
                continue
            for i, leaf in enumerate(part.leaves()):
                violations.extend(_check_outcome_set(f"{cpath} {_leaf_label(i, leaf)}", leaf.payload, m.dims))

    for s in m.discrete_states:
        if not m.applicable_actions(s):
            violations.append(f"discrete_states[{s}]: no applicable action")
    return violations


# --- JSON document format ---

def _load_schema():
    with open(SCHEMA_PATH, "r") as f:
        return json.load(f)


def _partition_from_records(dims, records, parse_payload):
    items = [(Rect.from_dict(rec["rect"]), parse_payload(rec)) for rec in records]
    return from_leaves(dims, items)


def _parse_outcomes(rec):
    return OutcomeSet(tuple(Outcome(o["kind"], tuple(float(v) for v in o["target"]), float(o["prob"]))
                            for o in rec["outcomes"]))


def model_from_dict(doc):
    """
    Builds a HybridMdp from a parsed model document and validates it.

    Raises:
        ModelError: Schema violations, partition construction failures, or
                    model invariant violations, aggregated.
    """
    schema_errors = sorted(Draft202012Validator(_load_schema()).iter_errors(doc), key=lambda e: list(e.path))
    if schema_errors:
        raise ModelError("Model document does not match the schema",
                         ["/".join(str(p) for p in e.absolute_path) + f": {e.message}" for e in schema_errors])
    dims = doc["dims"]
    problems = []
    entries = {}
    for i, raw in enumerate(doc["entries"]):
        key = (raw["state"], raw["action"])
        path = f"entries[{i}] ({key[0]}/{key[1]})"
        if key in entries:
            problems.append(f"{path}: duplicate entry")
            continue
        try:
            reward = _partition_from_records(
                dims, raw["reward"], lambda rec: PwlcSet.from_records(rec["linear_fns"]))
            discrete = _partition_from_records(
                dims, raw["discrete_transition"], lambda rec: {s: float(p) for s, p in rec["successors"].items()})
            continuous = {succ: _partition_from_records(dims, recs, _parse_outcomes)
                          for succ, recs in raw["continuous"].items()}
        except (DomainError, ValueError) as e:
            problems.append(f"{path}: {e}")
            continue
        entries[key] = ModelEntry(key[0], key[1], reward, discrete, continuous, raw.get("applicable", True))
    if problems:
        raise ModelError("Model document could not be parsed", problems)

    m = HybridMdp(
        dims=dims,
        discrete_states=tuple(doc["discrete_states"]),
        actions=tuple(doc["actions"]),
        entries=entries,
        horizon=doc["horizon"],
        out_of_bounds_value=float(doc.get("out_of_bounds_value", 0.0)),
        metadata=dict(doc.get("metadata", {})),
    )
    violations = validate(m)
    if violations:
        raise ModelError("Model is invalid", violations)
    logging.info(f"Loaded model: d={m.dims}, {len(m.discrete_states)} discrete states, "
                 f"{len(m.actions)} actions, {len(m.entries)} entries, horizon {m.horizon}.")
    return m


def load_model(text):
    """
    Parses and validates a model document.

    Args:
        text (str): The JSON document.

    Returns:
        HybridMdp: The validated model.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelError(f"Invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")
    return model_from_dict(doc)


def load_model_file(path):
    with open(path, "r") as f:
        return load_model(f.read())


def _encode_outcomes(outcomes):
    return {"outcomes": [{"kind": o.kind, "target": list(o.target), "prob": o.prob} for o in outcomes]}


def model_to_dict(m):
    entries = []
    for (s, a), entry in m.entries.items():
        entries.append({
            "state": s,
            "action": a,
            "applicable": entry.applicable,
            "reward": [{"rect": {"low": r["low"], "high": r["high"]}, "linear_fns": r["linear_fns"]}
                       for r in partition_records(entry.reward, lambda p: {"linear_fns": p.to_records()})],
            "discrete_transition": [{"rect": {"low": r["low"], "high": r["high"]}, "successors": r["successors"]}
                                    for r in partition_records(entry.discrete_transition,
                                                               lambda p: {"successors": dict(p)})],
            "continuous": {succ: [{"rect": {"low": r["low"], "high": r["high"]}, "outcomes": r["outcomes"]}
                                  for r in partition_records(part, _encode_outcomes)]
                           for succ, part in entry.continuous.items()},
        })
    return {
        "dims": m.dims,
        "discrete_states": list(m.discrete_states),
        "actions": list(m.actions),
        "horizon": m.horizon,
        "out_of_bounds_value": m.out_of_bounds_value,
        "metadata": m.metadata,
        "entries": entries,
    }


def save_model(m):
    """Serializes a model to its JSON document."""
    return json.dumps(model_to_dict(m), indent=1)
