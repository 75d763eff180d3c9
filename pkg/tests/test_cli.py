import json
from unittest.mock import patch

import pandas as pd
import pytest

from src.cli import POLICY_FILE, REPORT_FILE, STATS_FILE, SWEEP_COLUMNS, VALUES_FILE, main
from src.errors import (EXIT_FAILURE, EXIT_MODEL_INVALID, EXIT_NUMERICAL, EXIT_OK, EXIT_RESOURCE_CAP,
                        BudgetExceededError, DomainError, ModelError, NumericalError, PolicyGapError,
                        ResourceCapError, exit_code_for)
from src.model import load_model_file


@pytest.fixture
def rover_model(tmp_path):
    """A small generated rover model document on disk."""
    path = tmp_path / "rover.json"
    assert main(["gen-rover", "--resources", "1", "--resolution", "2", "--out", str(path)]) == EXIT_OK
    return path


@pytest.fixture
def solved(tmp_path, rover_model):
    out = tmp_path / "solution"
    assert main(["solve", str(rover_model), "--horizon", "2", "--threads", "1", "--out", str(out)]) == EXIT_OK
    return out


def test_gen_rover_writes_a_valid_model(rover_model):
    m = load_model_file(rover_model)
    assert m.dims == 1
    assert len(m.discrete_states) == 13


def test_solve_writes_dumps_and_report(solved):
    for name in (VALUES_FILE, POLICY_FILE, STATS_FILE, REPORT_FILE):
        assert (solved / name).exists()
    report = json.loads((solved / REPORT_FILE).read_text())
    assert report["command"] == "solve"
    assert report["parameters"]["horizon"] == 2
    assert len(report["model_sha256"]) == 64
    stats = pd.read_csv(solved / STATS_FILE)
    assert list(stats.columns) == ["stage", "state", "leaves", "vectors", "seconds"]
    assert report["peak_vectors"] == stats.groupby("stage")["vectors"].sum().max()


def test_solve_invalid_model_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"dims": 1}))
    assert main(["solve", str(path), "--out", str(tmp_path / "out")]) == EXIT_MODEL_INVALID


def test_solve_missing_file_exits_1(tmp_path):
    assert main(["solve", str(tmp_path / "missing.json")]) == EXIT_FAILURE


def test_solve_vector_cap_exits_4(tmp_path, rover_model):
    args = ["solve", str(rover_model), "--horizon", "2", "--max-vectors", "1", "--out", str(tmp_path / "out")]
    assert main(args) == EXIT_RESOURCE_CAP


def test_dump_has_one_row_per_leaf(tmp_path, solved):
    out = tmp_path / "partition.csv"
    assert main(["dump", str(solved), "--out", str(out)]) == EXIT_OK
    table = pd.read_csv(out)
    stats = pd.read_csv(solved / STATS_FILE)
    assert len(table) == stats["leaves"].sum()
    assert list(table.columns) == ["stage", "state", "low_0", "high_0", "vectors", "linear_fns"]


def test_dump_unknown_state_exits_1(tmp_path, solved):
    assert main(["dump", str(solved), "--state", "nowhere", "--out", str(tmp_path / "x.csv")]) == EXIT_FAILURE


def test_simulate_from_saved_solution(tmp_path, rover_model, solved):
    out = tmp_path / "rollout.json"
    args = ["simulate", str(rover_model), "--solution", str(solved), "--episodes", "50", "--seed", "4",
            "--out", str(out)]
    assert main(args) == EXIT_OK
    result = json.loads(out.read_text())
    assert result["episodes"] == 50
    assert result["seed"] == 4
    assert set(result) == {"mean", "stderr", "episodes", "seed"}


def test_baseline_writes_cell_table(tmp_path, rover_model):
    out = tmp_path / "grid"
    assert main(["baseline", str(rover_model), "--resolution", "4", "--horizon", "2", "--out", str(out)]) == EXIT_OK
    table = pd.read_csv(out / "grid_values.csv")
    assert len(table) == 4 * 13
    assert (out / "baseline_report.json").exists()


def test_compare_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    args = ["compare", "--resolutions", "2,3", "--variants", "pwc", "--resources", "1", "--horizon", "2",
            "--threads", "1", "--out", str(out)]
    assert main(args) == EXIT_OK
    sweep = pd.read_csv(out)
    assert list(sweep.columns) == SWEEP_COLUMNS
    assert len(sweep) == 4
    assert set(sweep["status"]) == {"completed"}
    assert set(sweep["solver"]) == {"structured", "naive"}


def _compare_args(out, *extra):
    return ["compare", "--resolutions", "2", "--variants", "pwc", "--resources", "1", "--horizon", "1",
            "--threads", "1", "--out", str(out), *extra]


@patch("src.cli.grid_value_iteration", side_effect=MemoryError())
def test_compare_records_out_of_memory(mock_grid, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(_compare_args(out)) == EXIT_OK
    sweep = pd.read_csv(out)
    status = dict(zip(sweep["solver"], sweep["status"]))
    assert status == {"structured": "completed", "naive": "memory"}
    assert mock_grid.called


@patch("src.cli.value_iteration", side_effect=NumericalError("witness LP did not converge", 3))
def test_compare_records_a_failed_run_and_keeps_sweeping(mock_solve, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(_compare_args(out)) == EXIT_OK
    sweep = pd.read_csv(out)
    status = dict(zip(sweep["solver"], sweep["status"]))
    assert status == {"structured": "failed", "naive": "completed"}
    assert sweep.loc[sweep["solver"] == "structured", "size"].isna().all()


@patch("src.cli.grid_value_iteration", side_effect=MemoryError())
@patch("src.cli.value_iteration", side_effect=BudgetExceededError("Time budget exceeded"))
def test_compare_without_a_completed_run(mock_solve, mock_grid, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(_compare_args(out)) == EXIT_RESOURCE_CAP
    assert set(pd.read_csv(out)["status"]) == {"timeout", "memory"}


def test_compare_writes_rows_before_an_aborted_sweep(tmp_path):
    from src.rover import generate as real_generate
    calls = []

    def flaky_generate(*args, **kwargs):
        calls.append(kwargs["resolution"])
        if len(calls) > 1:
            raise DomainError("resolution not supported")
        return real_generate(*args, **kwargs)

    out = tmp_path / "sweep.csv"
    with patch("src.cli.generate", side_effect=flaky_generate):
        code = main(["compare", "--resolutions", "2,3", "--variants", "pwc", "--resources", "1", "--horizon", "1",
                     "--threads", "1", "--out", str(out)])
    assert code == EXIT_FAILURE
    sweep = pd.read_csv(out)
    assert len(sweep) == 2
    assert set(sweep["resolution"]) == {2}


def test_compare_three_resources_naive_hits_the_cell_cap(tmp_path):
    # 8 cells per state over 13 states exceed a cap of 50; the structured solver is not capped
    out = tmp_path / "sweep.csv"
    args = ["compare", "--resolutions", "2", "--variants", "pwc", "--resources", "3", "--horizon", "2",
            "--max-cells", "50", "--threads", "1", "--out", str(out)]
    assert main(args) == EXIT_OK
    sweep = pd.read_csv(out)
    status = dict(zip(sweep["solver"], sweep["status"]))
    assert status == {"structured": "completed", "naive": "memory"}


def test_unknown_command_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 2


@pytest.mark.parametrize("error, code", [
    (ModelError("bad"), EXIT_MODEL_INVALID),
    (NumericalError("lp"), EXIT_NUMERICAL),
    (ResourceCapError("cap"), EXIT_RESOURCE_CAP),
    (BudgetExceededError("slow"), EXIT_RESOURCE_CAP),
    (DomainError("x"), EXIT_FAILURE),
    (PolicyGapError("gap"), EXIT_FAILURE),
    (OSError("io"), EXIT_FAILURE),
])
def test_exit_code_for(error, code):
    assert exit_code_for(error) == code
