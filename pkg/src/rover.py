"""
Rover benchmark instances.

A staged plan (drive, approach, dig, back up, spectral imaging, then either
high-resolution imaging or low-resolution imaging plus onboard analysis,
transmit, park) over 1 to 3 continuous resources. Each action consumes every
resource according to an independent Gaussian, discretized into relative
outcomes. Minimum-resource preconditions send the rover to the terminal
`failed` state; `halt` ends the mission in every stage.
"""
import itertools
import json
import logging
import math
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from scipy.stats import norm

from .config import DATA_DIR
from .errors import DomainError
from .geometry import Rect, box_complement, from_leaves, single_leaf
from .model import HybridMdp, ModelEntry, OutcomeSet, relative
from .pwlc import PwlcSet, constant, zero

DEFAULT_SPEC_PATH = DATA_DIR / "rover_default.json"
TRUNCATION_SIGMAS = 3.0
MAX_RESOURCES = 3
VARIANTS = ("pwc", "pwlc")
DONE = "done"
FAILED = "failed"
HALT = "halt"


@dataclass(frozen=True)
class ActionSpec:
    name: str
    source: str
    target: str
    mean: Tuple[float, ...]
    std: Tuple[float, ...]
    min_resource: Tuple[float, ...]
    reward: float = 0.0
    linear_reward: Tuple[Tuple[Tuple[float, ...], float], ...] = ()


@dataclass(frozen=True)
class DomainSpec:
    stages: Tuple[str, ...]
    actions: Tuple[ActionSpec, ...]
    resources: int = 1
    resolution: int = 25
    horizon: int = 10
    variant: str = "pwc"
    max_outcomes: int = 0
    out_of_bounds_value: float = 0.0
    start: Tuple[float, ...] = (0.9, 0.9, 0.9)
    resource_names: Tuple[str, ...] = ("time", "energy", "storage")
    name: str = "rover"
    label: str = "reconstruction"


def spec_from_dict(doc):
    """Builds a DomainSpec from its JSON document."""
    try:
        actions = tuple(ActionSpec(
            name=a["name"],
            source=a["source"],
            target=a["target"],
            mean=tuple(float(v) for v in a["mean"]),
            std=tuple(float(v) for v in a["std"]),
            min_resource=tuple(float(v) for v in a.get("min_resource", [0.0] * len(a["mean"]))),
            reward=float(a.get("reward", 0.0)),
            linear_reward=tuple((tuple(float(c) for c in fn["coeffs"]), float(fn["offset"]))
                                for fn in a.get("linear_reward", [])),
        ) for a in doc["actions"])
        optional = {k: doc[k] for k in ("resources", "resolution", "horizon", "variant", "max_outcomes",
                                        "out_of_bounds_value", "name", "label") if k in doc}
        if "start" in doc:
            optional["start"] = tuple(float(v) for v in doc["start"])
        if "resource_names" in doc:
            optional["resource_names"] = tuple(doc["resource_names"])
        return DomainSpec(stages=tuple(doc["stages"]), actions=actions, **optional)
    except (KeyError, TypeError) as e:
        raise DomainError(f"Malformed rover spec: {e!r}")


def spec_to_dict(spec):
    return {
        "name": spec.name,
        "label": spec.label,
        "resource_names": list(spec.resource_names),
        "resources": spec.resources,
        "resolution": spec.resolution,
        "horizon": spec.horizon,
        "variant": spec.variant,
        "max_outcomes": spec.max_outcomes,
        "out_of_bounds_value": spec.out_of_bounds_value,
        "start": list(spec.start),
        "stages": list(spec.stages),
        "actions": [{
            "name": a.name, "source": a.source, "target": a.target,
            "mean": list(a.mean), "std": list(a.std), "min_resource": list(a.min_resource),
            "reward": a.reward,
            "linear_reward": [{"coeffs": list(c), "offset": b} for c, b in a.linear_reward],
        } for a in spec.actions],
    }


def load_spec(path=None):
    """Reads a DomainSpec JSON file (the shipped default when path is None)."""
    with open(path or DEFAULT_SPEC_PATH, "r") as f:
        return spec_from_dict(json.load(f))


def validate_spec(spec):
    """
    Returns:
        list: Violations; empty when the spec can be generated.
    """
    violations = []
    r = spec.resources
    if not 1 <= r <= MAX_RESOURCES:
        violations.append(f"resources: must lie in 1..{MAX_RESOURCES}, got {r}")
        return violations
    if spec.resolution < 2:
        violations.append(f"resolution: must be at least 2, got {spec.resolution}")
    if spec.horizon < 1:
        violations.append(f"horizon: must be positive, got {spec.horizon}")
    if spec.variant not in VARIANTS:
        violations.append(f"variant: must be one of {', '.join(VARIANTS)}, got {spec.variant!r}")
    if spec.max_outcomes < 0:
        violations.append(f"max_outcomes: must be nonnegative, got {spec.max_outcomes}")
    if len(spec.start) < r or any(not 0.0 <= v <= 1.0 for v in spec.start[:r]):
        violations.append(f"start: needs {r} levels in [0, 1], got {list(spec.start)}")
    stages = set(spec.stages)
    if len(stages) != len(spec.stages):
        violations.append("stages: contains duplicates")
    if stages & {DONE, FAILED}:
        violations.append(f"stages: '{DONE}' and '{FAILED}' are reserved")
    seen = set()
    for i, a in enumerate(spec.actions):
        path = f"actions[{i}] ({a.name})"
        if a.name == HALT:
            violations.append(f"{path}: '{HALT}' is reserved")
        if (a.source, a.name) in seen:
            violations.append(f"{path}: duplicate action for stage {a.source!r}")
        seen.add((a.source, a.name))
        for end in (a.source, a.target):
            if end not in stages:
                violations.append(f"{path}: unknown stage {end!r}")
        for field_name in ("mean", "std", "min_resource"):
            values = getattr(a, field_name)
            if len(values) < r:
                violations.append(f"{path}: {field_name} has {len(values)} entries, needs {r}")
        if len(a.std) >= r and any(not s > 0.0 for s in a.std[:r]):
            violations.append(f"{path}: std must be positive")
        if len(a.mean) >= r and len(a.std) >= r:
            for k in range(r):
                consumed = (a.mean[k] - TRUNCATION_SIGMAS * a.std[k], a.mean[k] + TRUNCATION_SIGMAS * a.std[k])
                if consumed[0] < -1.0 or consumed[1] > 1.0:
                    violations.append(f"{path}: consumption of resource {k} leaves [-1, 1]")
        if len(a.min_resource) >= r and any(not 0.0 <= v < 1.0 for v in a.min_resource[:r]):
            violations.append(f"{path}: min_resource must lie in [0, 1)")
        for j, (coeffs, _) in enumerate(a.linear_reward):
            if len(coeffs) < r:
                violations.append(f"{path}: linear_reward[{j}] has {len(coeffs)} coefficients, needs {r}")
    return violations


def discretize_gaussian(mean, std, resolution):
    """
    Discretizes a consumption distribution into relative outcomes.

    The support is truncated to mean +- 3 std and cut into `resolution` equal
    buckets; each outcome shifts the resource down by its bucket center with
    the bucket's renormalized Gaussian mass.

    Returns:
        list: (delta, prob) pairs, ascending consumption.
    """
    if not std > 0.0:
        raise DomainError(f"Standard deviation must be positive, got {std}")
    if resolution < 2:
        raise DomainError(f"Resolution must be at least 2, got {resolution}")
    z = np.linspace(-TRUNCATION_SIGMAS, TRUNCATION_SIGMAS, resolution + 1)
    mass = np.diff(norm.cdf(z))
    probs = mass / mass.sum()
    centers = mean + std * 0.5 * (z[:-1] + z[1:])
    return [(-float(c), float(p)) for c, p in zip(centers, probs)]


def _per_resource_resolution(resolution, resources, max_outcomes):
    per_resource = resolution
    if max_outcomes:
        while per_resource > 2 and per_resource ** resources > max_outcomes:
            per_resource -= 1
    return per_resource


def consumption_outcomes(action, resources, resolution, max_outcomes=0):
    """
    Joint outcome set of an action: the product of per-resource discretizations.

    Args:
        max_outcomes (int): When positive, the per-resource resolution is
            lowered until the joint count fits (never below 2).
    """
    per_resource = _per_resource_resolution(resolution, resources, max_outcomes)
    if per_resource != resolution:
        logging.info(f"Coarsened {action.name} from {resolution} to {per_resource} buckets per resource "
                     f"({per_resource ** resources} joint outcomes).")
    marginals = [discretize_gaussian(action.mean[k], action.std[k], per_resource) for k in range(resources)]
    joint = []
    for combo in itertools.product(*marginals):
        joint.append((tuple(delta for delta, _ in combo), math.prod(p for _, p in combo)))
    total = math.fsum(p for _, p in joint)
    return OutcomeSet(tuple(relative(delta, p / total) for delta, p in joint))


def _reward_set(action, spec):
    r = spec.resources
    if spec.variant == "pwlc" and action.linear_reward:
        return PwlcSet.from_fns((coeffs[:r], offset) for coeffs, offset in action.linear_reward)
    return constant(action.reward, r)


def _stay(dims):
    return OutcomeSet((relative((0.0,) * dims, 1.0),))


def _halt_entry(state, dims):
    terminal = FAILED if state == FAILED else DONE
    return ModelEntry(state, HALT, single_leaf(dims, zero(dims)), single_leaf(dims, {terminal: 1.0}),
                      {terminal: single_leaf(dims, _stay(dims))})


def _action_entry(action, spec):
    r = spec.resources
    unit = Rect.unit(r)
    low = tuple(action.min_resource[:r])
    outcomes = consumption_outcomes(action, r, spec.resolution, spec.max_outcomes)
    reward = _reward_set(action, spec)
    if not any(low):
        return ModelEntry(action.source, action.name, single_leaf(r, reward),
                          single_leaf(r, {action.target: 1.0}),
                          {action.target: single_leaf(r, outcomes)})
    allowed = Rect(low, (1.0,) * r)
    blocked = box_complement(unit, allowed)
    discrete = from_leaves(r, [(allowed, {action.target: 1.0})] + [(b, {FAILED: 1.0}) for b in blocked])
    rewards = from_leaves(r, [(allowed, reward)] + [(b, zero(r)) for b in blocked])
    continuous = {action.target: single_leaf(r, outcomes), FAILED: single_leaf(r, _stay(r))}
    return ModelEntry(action.source, action.name, rewards, discrete, continuous)


def generate(spec, variant=None, resources=None, resolution=None, max_outcomes=None):
    """
    Builds the rover HybridMdp; keyword arguments override spec fields.

    Returns:
        HybridMdp: 11 plan stages plus the `done` and `failed` terminals over
                   [0,1]^resources.

    Raises:
        DomainError: The spec is invalid (all violations listed).
    """
    overrides = {k: v for k, v in (("variant", variant), ("resources", resources),
                                   ("resolution", resolution), ("max_outcomes", max_outcomes)) if v is not None}
    spec = replace(spec, **overrides)
    violations = validate_spec(spec)
    if violations:
        raise DomainError("Invalid rover spec: " + "; ".join(violations))

    dims = spec.resources
    states = tuple(spec.stages) + (DONE, FAILED)
    action_names = []
    for a in spec.actions:
        if a.name not in action_names:
            action_names.append(a.name)
    action_names.append(HALT)

    entries = {}
    for a in spec.actions:
        entries[(a.source, a.name)] = _action_entry(a, spec)
    for s in states:
        entries[(s, HALT)] = _halt_entry(s, dims)

    logging.info(f"Generated rover model: {dims} resource(s), resolution {spec.resolution}, "
                 f"variant {spec.variant}, {len(states)} discrete states.")
    return HybridMdp(
        dims=dims,
        discrete_states=states,
        actions=tuple(action_names),
        entries=entries,
        horizon=spec.horizon,
        out_of_bounds_value=spec.out_of_bounds_value,
        metadata={"generator": spec.name, "label": spec.label, "variant": spec.variant,
                  "resolution": spec.resolution, "resources": list(spec.resource_names[:dims]),
                  "start": list(spec.start[:dims])},
    )


def start_point(spec, resources=None):
    """The initial resource levels of a spec, truncated to the resource count."""
    return tuple(spec.start[:resources or spec.resources])
