"""
Command-line front end.

    python -m src.cli solve MODEL --out DIR
    python -m src.cli baseline MODEL --resolution R --out DIR
    python -m src.cli compare --resolutions 2,5,10 --out sweep.csv
    python -m src.cli simulate MODEL --state S --point 0.9,0.9
    python -m src.cli gen-rover --out rover.json
    python -m src.cli dump DIR --out partition.csv

Exit codes: 0 ok, 1 other failure, 2 invalid model, 3 numerical failure,
4 resource cap or time budget.
"""
import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import pandas as pd

from . import __version__
from .baseline import grid_frame, grid_value_iteration
from .config import get_settings, set_log_level
from .errors import (EXIT_OK, EXIT_RESOURCE_CAP, BudgetExceededError, DomainError,
                     NumericalError, ResourceCapError, exit_code_for)
from .geometry import partition_frame
from .mc import RolloutConfig, simulate
from .model import load_model_file, save_model
from .rover import generate, load_spec, start_point
from .solver import extract_policy, load_policy, load_values, save_policy, save_values, value_iteration
from .utils import file_sha256, parse_point, parse_resolutions

VALUES_FILE = "values.json"
POLICY_FILE = "policy.json"
STATS_FILE = "stats.csv"
REPORT_FILE = "report.json"
SWEEP_COLUMNS = ["resolution", "variant", "solver", "seconds", "size", "status"]
FLOAT_FORMAT = "%.17g"


@dataclass
class RunReport:
    command: str
    model_path: str = None
    model_sha256: str = None
    parameters: dict = field(default_factory=dict)
    stats: list = field(default_factory=list)
    wall_seconds: float = 0.0
    peak_vectors: int = 0
    version: str = __version__

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _solver_parameters(args, settings):
    def pick(name):
        value = getattr(args, name, None)
        return settings[name] if value is None else value
    return {name: pick(name) for name in ("prune_tol", "merge_tol", "max_vectors", "time_budget", "threads")}


def _peak_vectors(stats):
    if stats.empty:
        return 0
    return int(stats.groupby("stage")["vectors"].sum().max())


def _out_dir(args, settings):
    out = Path(args.out or settings["solution_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(args):
    """Structured value iteration and greedy policy extraction; writes dumps and a report."""
    settings = get_settings()
    params = _solver_parameters(args, settings)
    started = time.perf_counter()
    m = load_model_file(args.model)
    solution = value_iteration(m, horizon=args.horizon, **params)
    policy = extract_policy(solution.values, m, params["prune_tol"], params["threads"])
    out = _out_dir(args, settings)
    (out / VALUES_FILE).write_text(save_values(solution.values))
    (out / POLICY_FILE).write_text(save_policy(policy, m.dims))
    solution.stats.to_csv(out / STATS_FILE, index=False, float_format=FLOAT_FORMAT)
    report = RunReport(
        command="solve",
        model_path=str(args.model),
        model_sha256=file_sha256(args.model),
        parameters={**params, "horizon": len(solution.values) - 1},
        stats=solution.stats.to_dict(orient="records"),
        wall_seconds=time.perf_counter() - started,
        peak_vectors=_peak_vectors(solution.stats),
    )
    report.write(out / REPORT_FILE)
    logging.info(f"Solved {args.model} to horizon {len(solution.values) - 1}; wrote {out}.")
    return EXIT_OK


def cmd_baseline(args):
    """Naive grid value iteration; writes the stats CSV and the cell-center value table."""
    settings = get_settings()
    started = time.perf_counter()
    m = load_model_file(args.model)
    solution = grid_value_iteration(m, args.resolution, horizon=args.horizon, max_cells=args.max_cells,
                                    time_budget=args.time_budget)
    out = _out_dir(args, settings)
    solution.stats.to_csv(out / "baseline_stats.csv", index=False, float_format=FLOAT_FORMAT)
    grid_frame(solution).to_csv(out / "grid_values.csv", index=False, float_format=FLOAT_FORMAT)
    RunReport(
        command="baseline",
        model_path=str(args.model),
        model_sha256=file_sha256(args.model),
        parameters={"resolution": args.resolution, "horizon": len(solution.values) - 1,
                    "max_cells": args.max_cells or settings["max_cells"]},
        stats=solution.stats.to_dict(orient="records"),
        wall_seconds=time.perf_counter() - started,
        peak_vectors=_peak_vectors(solution.stats),
    ).write(out / "baseline_report.json")
    logging.info(f"Grid solve of {args.model} at resolution {args.resolution} written to {out}.")
    return EXIT_OK


def _timed(run, label):
    """Runs one solver of the sweep; a failed run becomes a status instead of an error."""
    started = time.perf_counter()
    size = None
    try:
        size = run()
        status = "completed"
    except BudgetExceededError as e:
        status = "timeout"
        logging.warning(f"compare: {label} ran out of time: {e}")
    except (ResourceCapError, MemoryError) as e:
        # a real MemoryError carries no message
        status = "memory"
        logging.warning(f"compare: {label} hit a memory limit: {e or type(e).__name__}")
    except (NumericalError, RuntimeError, ValueError) as e:
        status = "failed"
        logging.error(f"compare: {label} failed: {e}")
    return time.perf_counter() - started, size, status


def _write_sweep(rows, out):
    sweep = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    if out:
        sweep.to_csv(out, index=False, float_format=FLOAT_FORMAT)
    else:
        sys.stdout.write(sweep.to_csv(index=False, float_format=FLOAT_FORMAT))
    return sweep


def cmd_compare(args):
    """Resolution sweep of the structured and naive solvers on generated rover instances."""
    settings = get_settings()
    spec = load_spec(args.spec)
    budget = settings["time_budget"] if args.time_budget is None else args.time_budget
    max_vectors = settings["max_vectors"] if args.max_vectors is None else args.max_vectors
    rows = []
    try:
        for resolution in parse_resolutions(args.resolutions):
            for variant in args.variants.split(","):
                m = generate(spec, variant=variant, resources=args.resources, resolution=resolution,
                             max_outcomes=args.max_outcomes)

                def structured():
                    solution = value_iteration(m, horizon=args.horizon, time_budget=budget,
                                               max_vectors=max_vectors, threads=args.threads)
                    last = solution.stats[solution.stats["stage"] == solution.stats["stage"].max()]
                    return int(last["leaves"].sum())

                def naive():
                    grid = grid_value_iteration(m, resolution, horizon=args.horizon, max_cells=args.max_cells,
                                                time_budget=budget)
                    return grid.resolution ** m.dims * len(m.discrete_states)

                for solver, run in (("structured", structured), ("naive", naive)):
                    label = f"resolution {resolution}, {variant}, {solver}"
                    seconds, size, status = _timed(run, label)
                    logging.info(f"compare: {label}: {status} in {seconds:.3f}s.")
                    rows.append({"resolution": resolution, "variant": variant, "solver": solver,
                                 "seconds": seconds, "size": size, "status": status})
    finally:
        # rows finished before an aborted sweep are still written
        sweep = _write_sweep(rows, args.out)
    if not (sweep["status"] == "completed").any():
        logging.error("No run of the sweep completed.")
        return EXIT_RESOURCE_CAP
    return EXIT_OK


def cmd_simulate(args):
    """Monte-Carlo estimate of the greedy policy's return from a start state."""
    settings = get_settings()
    m = load_model_file(args.model)
    if args.solution:
        policy = load_policy((Path(args.solution) / POLICY_FILE).read_text())
    else:
        params = _solver_parameters(args, settings)
        solution = value_iteration(m, horizon=args.horizon, **params)
        policy = extract_policy(solution.values, m, params["prune_tol"], params["threads"])
    state = args.state or m.discrete_states[0]
    point = parse_point(args.point) if args.point else tuple(m.metadata.get("start", [0.5] * m.dims))
    seed = settings["seed"] if args.seed is None else args.seed
    result = simulate(m, policy, RolloutConfig(state, point, args.episodes, seed), threads=args.threads or 1)
    payload = json.dumps(result.to_dict(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(payload)
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def cmd_gen_rover(args):
    """Writes a rover model document generated from a DomainSpec."""
    spec = load_spec(args.spec)
    m = generate(spec, variant=args.variant, resources=args.resources, resolution=args.resolution,
                 max_outcomes=args.max_outcomes)
    text = save_model(m)
    if args.out:
        Path(args.out).write_text(text)
        logging.info(f"Wrote rover model ({m.dims}D, start {list(start_point(spec, m.dims))}) to {args.out}.")
    else:
        sys.stdout.write(text + "\n")
    return EXIT_OK


def cmd_dump(args):
    """Per-leaf CSV of a solved value dump: stage, state, low_i, high_i, vectors, linear_fns."""
    values = load_values((Path(args.solution) / VALUES_FILE).read_text())
    stages = [values[args.stage]] if args.stage is not None else values
    frames = []
    for v in stages:
        for s, part in v.partitions.items():
            if args.state and s != args.state:
                continue
            frame = partition_frame(part, lambda p: {"vectors": len(p), "linear_fns": json.dumps(p.to_records())})
            frame.insert(0, "state", s)
            frame.insert(0, "stage", v.stage)
            frames.append(frame)
    if not frames:
        raise DomainError(f"No partition matches state {args.state!r}")
    table = pd.concat(frames, ignore_index=True)
    if args.out:
        table.to_csv(args.out, index=False, float_format=FLOAT_FORMAT)
    else:
        sys.stdout.write(table.to_csv(index=False, float_format=FLOAT_FORMAT))
    return EXIT_OK


def _add_solver_flags(parser):
    parser.add_argument("--horizon", type=int, help="Stages to solve (default: the model's horizon)")
    parser.add_argument("--merge-tol", dest="merge_tol", type=float,
                        help="Approximate merge tolerance; 0 = exact merging only")
    parser.add_argument("--prune-tol", dest="prune_tol", type=float, help="Dominance tolerance")
    parser.add_argument("--max-vectors", dest="max_vectors", type=int,
                        help="Abort when a stage holds more linear functions (0 = no cap)")
    parser.add_argument("--time-budget", dest="time_budget", type=float, help="Seconds; 0 = unlimited")
    parser.add_argument("--threads", type=int, help="Worker threads (default: machine parallelism)")


def _add_rover_flags(parser):
    parser.add_argument("--spec", help="DomainSpec JSON (default: the shipped spec)")
    parser.add_argument("--resources", type=int, help="Continuous resources, 1..3")
    parser.add_argument("--resolution", type=int, help="Buckets per resource consumption distribution")
    parser.add_argument("--max-outcomes", dest="max_outcomes", type=int, help="Cap on joint outcomes per action")


def build_parser():
    parser = argparse.ArgumentParser(prog="scdp", description="Structured continuous-state dynamic programming.")
    parser.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="Structured value iteration")
    solve.add_argument("model")
    solve.add_argument("--out", help="Output directory (default: SCDP_SOLUTION_DIR)")
    _add_solver_flags(solve)
    solve.set_defaults(func=cmd_solve)

    baseline = sub.add_parser("baseline", help="Naive grid value iteration")
    baseline.add_argument("model")
    baseline.add_argument("--resolution", type=int, required=True)
    baseline.add_argument("--horizon", type=int)
    baseline.add_argument("--max-cells", dest="max_cells", type=int)
    baseline.add_argument("--time-budget", dest="time_budget", type=float)
    baseline.add_argument("--out")
    baseline.set_defaults(func=cmd_baseline)

    compare = sub.add_parser("compare", help="Resolution sweep, structured vs naive")
    compare.add_argument("--spec")
    compare.add_argument("--resolutions", required=True, help="Comma-separated, e.g. 2,5,10")
    compare.add_argument("--variants", default="pwc,pwlc")
    compare.add_argument("--resources", type=int)
    compare.add_argument("--max-outcomes", dest="max_outcomes", type=int)
    compare.add_argument("--horizon", type=int)
    compare.add_argument("--time-budget", dest="time_budget", type=float)
    compare.add_argument("--max-vectors", dest="max_vectors", type=int)
    compare.add_argument("--max-cells", dest="max_cells", type=int)
    compare.add_argument("--threads", type=int)
    compare.add_argument("--out", help="Sweep CSV (default: stdout)")
    compare.set_defaults(func=cmd_compare)

    sim = sub.add_parser("simulate", help="Monte-Carlo rollouts of the greedy policy")
    sim.add_argument("model")
    sim.add_argument("--solution", help="Directory holding policy.json; solves the model when omitted")
    sim.add_argument("--state", help="Start state (default: the first discrete state)")
    sim.add_argument("--point", help="Start point, e.g. 0.9,0.9 (default: metadata start or the center)")
    sim.add_argument("--episodes", type=int, default=10_000)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", help="Result JSON (default: stdout)")
    _add_solver_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    gen = sub.add_parser("gen-rover", help="Generate a rover model document")
    _add_rover_flags(gen)
    gen.add_argument("--variant", choices=["pwc", "pwlc"])
    gen.add_argument("--out", help="Model JSON (default: stdout)")
    gen.set_defaults(func=cmd_gen_rover)

    dump = sub.add_parser("dump", help="Per-leaf CSV of a solved value function")
    dump.add_argument("solution", help="Directory written by solve")
    dump.add_argument("--stage", type=int)
    dump.add_argument("--state")
    dump.add_argument("--out", help="CSV (default: stdout)")
    dump.set_defaults(func=cmd_dump)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_log_level(args.log_level)
    try:
        return args.func(args)
    except Exception as e:
        code = exit_code_for(e)
        logging.error(f"{args.command} failed: {e}")
        return code


if __name__ == "__main__":
    sys.exit(main())
