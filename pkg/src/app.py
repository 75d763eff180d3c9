import os
import logging
from pathlib import Path

import pandas as pd
from flask import Flask, jsonify, request
from dotenv import load_dotenv

from .config import get_settings
from .errors import DomainError
from .geometry import partition_records
from .solver import eval_value, load_policy, load_values, policy_action
from .utils import parse_point

# Load environment variables from .env file
load_dotenv()

app = Flask(__name__)

# Solutions loaded so far, keyed by directory
_solutions = {}


def load_solution(directory=None):
    """
    Loads a solution directory written by `src.cli solve`, once.

    Args:
        directory (str, optional): Defaults to the SCDP_SOLUTION_DIR setting.

    Returns:
        dict: {'values', 'policy', 'stats'}, or None if the directory holds
              no readable solution.
    """
    directory = str(directory or get_settings()["solution_dir"])
    if directory in _solutions:
        return _solutions[directory]
    root = Path(directory)
    try:
        values = load_values((root / "values.json").read_text())
        policy_path = root / "policy.json"
        policy = load_policy(policy_path.read_text()) if policy_path.exists() else None
        stats_path = root / "stats.csv"
        stats = pd.read_csv(stats_path) if stats_path.exists() else None
    except (OSError, ValueError, KeyError) as e:
        logging.error(f"Could not load solution from {directory}: {e}")
        return None
    logging.info(f"Loaded solution from {directory}: {len(values)} stages.")
    _solutions[directory] = {"values": values, "policy": policy, "stats": stats}
    return _solutions[directory]


def _point_arg():
    return parse_point(request.args.get("x"))


def _stage_arg(count):
    text = request.args.get("stage")
    if text is None:
        return count - 1
    try:
        stage = int(text)
    except ValueError:
        raise DomainError(f"Stage must be an integer, got {text!r}")
    if not 0 <= stage < count:
        raise DomainError(f"Stage {stage} outside 0..{count - 1}")
    return stage


def _state_arg(partitions):
    state = request.args.get("state")
    if state not in partitions:
        raise DomainError(f"Unknown or missing discrete state {state!r}")
    return state


@app.errorhandler(DomainError)
def bad_request(error):
    return jsonify({"error": str(error)}), 400


@app.route('/api/stats')
def get_stats():
    """API endpoint providing the per-stage statistics of the solution."""
    solution = load_solution()
    if solution is None or solution["stats"] is None:
        return jsonify({"error": "Failed to load solution statistics"}), 500
    return jsonify(solution["stats"].to_dict(orient="records"))


@app.route('/api/value')
def get_value():
    """API endpoint evaluating V^k_s(x)."""
    solution = load_solution()
    if solution is None:
        return jsonify({"error": "Failed to load solution"}), 500
    values = solution["values"]
    state = _state_arg(values[0].partitions)
    point = _point_arg()
    stage = _stage_arg(len(values))
    return jsonify({"state": state, "x": list(point), "stage": stage,
                    "value": eval_value(values, state, point, stage)})


@app.route('/api/policy')
def get_policy():
    """API endpoint returning the greedy action at a point."""
    solution = load_solution()
    if solution is None or solution["policy"] is None:
        return jsonify({"error": "Failed to load solution policy"}), 500
    policy = solution["policy"]
    state = _state_arg(policy[0])
    point = _point_arg()
    stage = _stage_arg(len(policy))
    choice = policy_action(policy[stage], state, point)
    return jsonify({"state": state, "x": list(point), "stage": stage, "action": choice.action,
                    "index": choice.index, "value": choice.value})


@app.route('/api/partition')
def get_partition():
    """API endpoint listing the leaves of one value partition."""
    solution = load_solution()
    if solution is None:
        return jsonify({"error": "Failed to load solution"}), 500
    values = solution["values"]
    state = _state_arg(values[0].partitions)
    stage = _stage_arg(len(values))
    part = values[stage].partitions[state]
    leaves = partition_records(part, lambda s: {"linear_fns": s.to_records()})
    return jsonify({"state": state, "stage": stage, "leaves": leaves})


if __name__ == '__main__':
    debug_mode = os.getenv('FLASK_DEBUG', 'False').lower() in ('true', '1', 'yes')
    app.run(debug=debug_mode)
