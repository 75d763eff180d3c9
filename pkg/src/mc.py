"""
Monte-Carlo rollouts of a stage policy on a HybridMdp.

Episodes sample the model's own discretized distributions. Each episode
draws from its own generator, seeded with (seed, episode index), so serial
and threaded runs produce the same returns.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Tuple

import numpy as np

from .errors import DomainError, PolicyGapError
from .geometry import check_point, locate, snap
from .model import ABSOLUTE
from .pwlc import evaluate
from .solver import policy_action


class RolloutConfig(NamedTuple):
    state: str
    point: Tuple[float, ...]
    episodes: int = 10_000
    seed: int = 0


class RolloutResult(NamedTuple):
    mean: float
    stderr: float
    episodes: int
    seed: int

    def to_dict(self):
        return self._asdict()


def _sample(rng, probs):
    # inverse-CDF draw over a fixed order
    u = rng.random()
    cumulative = 0.0
    for i, p in enumerate(probs):
        cumulative += p
        if u < cumulative:
            return i
    return len(probs) - 1


def _successor_point(x, outcome):
    """Landing point of an outcome, or None when the mass leaves the cube."""
    if outcome.kind == ABSOLUTE:
        return tuple(outcome.target)
    y = []
    for v, delta in zip(x, outcome.target):
        if delta == 0.0:
            y.append(v)
            continue
        w = snap(v + delta)
        # half-open source cells: landing exactly on the top face counts as leaving
        if w < 0.0 or w > 1.0 or (delta > 0.0 and w >= 1.0):
            return None
        y.append(w)
    return tuple(y)


def _episode(m, policy, cfg, episode, trace=None):
    rng = np.random.default_rng([cfg.seed, episode])
    s = cfg.state
    x = tuple(cfg.point)
    total = 0.0
    for k in range(len(policy) - 1, -1, -1):
        if s not in policy[k]:
            raise PolicyGapError(f"No policy for discrete state {s!r} at stage {k}")
        action = policy_action(policy[k], s, x).action
        entry = m.entry(s, action)
        if entry is None or not entry.applicable:
            raise PolicyGapError(f"Policy picks {action!r}, not applicable in {s!r} at {list(x)} (stage {k})")
        reward = evaluate(locate(entry.reward, x).payload, x)[0]
        total += reward

        dist = locate(entry.discrete_transition, x).payload
        successors = [t for t in m.discrete_states if dist.get(t, 0.0) > 0.0]
        succ = successors[_sample(rng, [dist[t] for t in successors])]
        outcomes = locate(entry.continuous[succ], x).payload.outcomes
        outcome = outcomes[_sample(rng, [o.prob for o in outcomes])]
        y = _successor_point(x, outcome)
        if trace is not None:
            trace.append({"stage": k, "state": s, "point": list(x), "action": action, "reward": reward,
                          "successor": succ, "next_point": None if y is None else list(y)})
        if y is None:
            total += m.out_of_bounds_value
            break
        s, x = succ, y
    return total


def _check_config(m, policy, cfg):
    if cfg.episodes < 1:
        raise DomainError(f"Episode count must be positive, got {cfg.episodes}")
    if cfg.state not in m.discrete_states:
        raise DomainError(f"Unknown start state {cfg.state!r}")
    if not policy:
        raise DomainError("Policy has no stages")
    return cfg._replace(point=check_point(cfg.point, m.dims))


def simulate(m, policy, cfg, threads=1):
    """
    Estimates the expected total reward of a policy from a start state.

    Args:
        m (HybridMdp): The model.
        policy (list): Stage policies (solver.extract_policy output); the
            rollout lasts len(policy) steps.
        cfg (RolloutConfig): Start, episode count and seed.
        threads (int): Worker threads; results do not depend on it.

    Returns:
        RolloutResult: Mean return, its standard error, episodes and seed.

    Raises:
        PolicyGapError: A reached state has no applicable policy action.
    """
    cfg = _check_config(m, policy, cfg)
    run = lambda episode: _episode(m, policy, cfg, episode)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            returns = np.fromiter(pool.map(run, range(cfg.episodes)), dtype=float, count=cfg.episodes)
    else:
        returns = np.fromiter((run(e) for e in range(cfg.episodes)), dtype=float, count=cfg.episodes)
    mean = float(returns.mean())
    stderr = float(returns.std(ddof=1) / math.sqrt(len(returns))) if len(returns) > 1 else 0.0
    logging.info(f"Simulated {cfg.episodes} episodes from {cfg.state} {list(cfg.point)}: "
                 f"mean {mean:.6g}, stderr {stderr:.3g}.")
    return RolloutResult(mean, stderr, cfg.episodes, cfg.seed)


def rollout(m, policy, cfg, episode=0):
    """Trace of one episode: a list of per-step records."""
    cfg = _check_config(m, policy, cfg)
    trace = []
    _episode(m, policy, cfg, episode, trace)
    return trace
