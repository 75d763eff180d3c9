import itertools
from unittest.mock import patch

import numpy as np
import pytest

from src.baseline import cell_centers, grid_action, grid_frame, grid_lookup, grid_value_iteration
from src.errors import BudgetExceededError, DomainError, ResourceCapError
from src.model import HybridMdp, make_entry, outcome_set, relative
from src.rover import generate, load_spec
from src.solver import eval_value, value_iteration
from tests.factories import grid_aligned_m1


def _one_state(rewards, horizon=3):
    entries = {("s", a): make_entry("s", a, r, {"s": outcome_set(relative((0.0,)))}) for a, r in rewards.items()}
    return HybridMdp(1, ("s",), tuple(rewards), entries, horizon)


def test_cell_centers_in_c_order():
    centers = cell_centers(2, 2)
    np.testing.assert_allclose(centers, [[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])


def test_zero_reward_gives_zero_tables():
    solution = grid_value_iteration(_one_state({"a": 0.0}), 8)
    assert len(solution.values) == 4
    for stage in solution.values:
        assert not np.any(stage["s"])


def test_single_cell_accumulates_reward():
    solution = grid_value_iteration(_one_state({"a": 1.0}), 1)
    assert solution.values[-1]["s"].shape == (1,)
    assert solution.values[-1]["s"][0] == pytest.approx(3.0)


@pytest.mark.parametrize("dims, horizon", [(1, 5), (2, 4), (3, 2)])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grid_matches_structured_solver_on_grid_aligned_models(dims, horizon, seed):
    """On models aligned with a 1/10 grid both solvers agree at every cell center."""
    rng = np.random.default_rng(seed)
    m = grid_aligned_m1(rng, dims, grid=10, horizon=horizon)
    structured = value_iteration(m, threads=1).values
    grid = grid_value_iteration(m, 10)
    centers = cell_centers(10, dims)
    for k in range(horizon + 1):
        table = grid.values[k]["s0"].reshape(-1)
        for i, center in enumerate(centers):
            assert table[i] == pytest.approx(eval_value(structured, "s0", center, k), abs=1e-9)


def test_cell_cap_raises_resource_cap_error():
    m = grid_aligned_m1(np.random.default_rng(0), 2)
    with pytest.raises(ResourceCapError):
        grid_value_iteration(m, 100, max_cells=1000)


def test_transition_cap_raises_resource_cap_error():
    # 400 cells per state stay under the cap; 400 cells times 25 outcomes do not
    m = generate(load_spec(), resources=2, resolution=5)
    with pytest.raises(ResourceCapError, match="transition entries"):
        grid_value_iteration(m, 20, horizon=1, max_cells=6000)


@patch("src.baseline.time.monotonic", side_effect=itertools.count(0.0, 10.0))
def test_time_budget_applies_while_building_transitions(mock_clock):
    m = _one_state({"a": 1.0})
    with pytest.raises(BudgetExceededError, match="grid transitions"):
        grid_value_iteration(m, 4, time_budget=1.0)


def test_resolution_must_be_positive():
    with pytest.raises(DomainError):
        grid_value_iteration(_one_state({"a": 0.0}), 0)


def test_grid_lookup_uses_containing_cell():
    table = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert grid_lookup(table, (0.49, 0.5)) == 2.0
    assert grid_lookup(table, (1.0, 1.0)) == 4.0
    with pytest.raises(DomainError):
        grid_lookup(table, (1.5, 0.0))


def test_grid_policy_picks_better_action():
    solution = grid_value_iteration(_one_state({"bad": 0.0, "good": 1.0}, horizon=2), 4)
    assert len(solution.policy) == 2
    assert grid_action(solution, "s", (0.3,), 1) == "good"


def test_grid_frame_has_one_row_per_cell():
    solution = grid_value_iteration(_one_state({"a": 1.0}), 5)
    frame = grid_frame(solution)
    assert list(frame.columns) == ["state", "center_0", "value"]
    assert len(frame) == 5
    assert frame["value"].tolist() == pytest.approx([3.0] * 5)
