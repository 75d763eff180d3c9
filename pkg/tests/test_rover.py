import math

import pytest

from src.errors import DomainError
from src.geometry import volume_coverage
from src.model import validate
from src.rover import (DONE, FAILED, HALT, consumption_outcomes, discretize_gaussian, generate, load_spec,
                       spec_from_dict, spec_to_dict, start_point, validate_spec)
from src.solver import value_iteration


def _phi(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def test_two_buckets_split_the_mass_evenly():
    outcomes = discretize_gaussian(0.1, 0.02, 2)
    assert [p for _, p in outcomes] == pytest.approx([0.5, 0.5])
    assert [d for d, _ in outcomes] == pytest.approx([-(0.1 - 1.5 * 0.02), -(0.1 + 1.5 * 0.02)])


@pytest.mark.parametrize("resolution", [3, 5, 25])
def test_bucket_masses_match_the_normal_cdf(resolution):
    outcomes = discretize_gaussian(0.2, 0.05, resolution)
    edges = [-3.0 + 6.0 * i / resolution for i in range(resolution + 1)]
    total = _phi(3.0) - _phi(-3.0)
    expected = [(_phi(b) - _phi(a)) / total for a, b in zip(edges, edges[1:])]
    assert [p for _, p in outcomes] == pytest.approx(expected, abs=1e-10)
    assert sum(p for _, p in outcomes) == pytest.approx(1.0, abs=1e-12)


def test_bucket_masses_do_not_depend_on_scale():
    narrow = discretize_gaussian(0.1, 0.001, 3)
    wide = discretize_gaussian(0.3, 0.05, 3)
    assert [p for _, p in narrow] == pytest.approx([p for _, p in wide], abs=1e-12)


def test_mean_consumption_is_preserved():
    outcomes = discretize_gaussian(0.12, 0.03, 7)
    assert -sum(d * p for d, p in outcomes) == pytest.approx(0.12, abs=1e-9)


@pytest.mark.parametrize("mean, std, resolution", [(0.1, 0.0, 3), (0.1, -0.1, 3), (0.1, 0.02, 1)])
def test_discretize_rejects_bad_arguments(mean, std, resolution):
    with pytest.raises(DomainError):
        discretize_gaussian(mean, std, resolution)


def test_joint_outcome_counts():
    action = load_spec().actions[0]
    assert len(consumption_outcomes(action, 1, 2)) == 2
    assert len(consumption_outcomes(action, 3, 4)) == 64
    capped = consumption_outcomes(action, 3, 4, max_outcomes=10)
    assert len(capped) == 8
    assert sum(o.prob for o in capped) == pytest.approx(1.0, abs=1e-12)


def test_default_spec_generates_a_valid_model():
    spec = load_spec()
    m = generate(spec, resolution=3)
    assert len(m.discrete_states) == 13
    assert m.discrete_states[-2:] == (DONE, FAILED)
    assert m.actions[-1] == HALT
    assert m.dims == spec.resources
    assert validate(m) == []
    for s in m.discrete_states:
        assert HALT in m.applicable_actions(s)


def test_preconditions_send_the_rover_to_failed():
    m = generate(load_spec(), resolution=2, resources=1)
    entry = m.entry("at_target", "dig")
    assert entry.discrete_transition.payload_at((0.05,)) == {FAILED: 1.0}
    assert entry.discrete_transition.payload_at((0.5,)) == {"dug": 1.0}
    assert entry.reward.payload_at((0.05,)).offsets[0] == 0.0


def test_pwlc_variant_uses_linear_rewards():
    m = generate(load_spec(), variant="pwlc", resolution=2)
    reward = m.entry("backed_up", "spectral_image").reward.payload_at((0.5, 0.5))
    assert not reward.is_constant()


@pytest.fixture(scope="module")
def solved_pwlc_rover():
    """The two-resource rover with linear rewards, 3 buckets per resource, solved for 4 steps."""
    m = generate(load_spec(), variant="pwlc", resources=2, resolution=3)
    return m, value_iteration(m, horizon=4, threads=1)


def test_solved_rover_has_multi_function_leaves_and_large_flat_regions(solved_pwlc_rover):
    m, solution = solved_pwlc_rover
    final = solution.values[-1]
    assert max(len(leaf.payload) for part in final.partitions.values() for leaf in part.leaves()) >= 2
    for s, part in final.partitions.items():
        assert volume_coverage(part, 0.3) >= 0.5, s


def test_early_stages_use_coarser_partitions(solved_pwlc_rover):
    m, solution = solved_pwlc_rover
    leaves = solution.stats.groupby("stage")["leaves"].sum()
    # V^0 is one leaf per state
    assert leaves[0] == len(m.discrete_states)
    assert leaves[1] < leaves[4]
    start = solution.stats[solution.stats["state"] == "start"].set_index("stage")["leaves"]
    assert start[1] <= start[4]


def test_spec_round_trips_through_dict():
    spec = load_spec()
    assert spec_from_dict(spec_to_dict(spec)) == spec


def test_invalid_spec_raises_domain_error():
    doc = spec_to_dict(load_spec())
    doc["actions"][0]["source"] = "nowhere"
    with pytest.raises(DomainError, match="unknown stage"):
        generate(spec_from_dict(doc))
    with pytest.raises(DomainError):
        spec_from_dict({"stages": ["a"]})


def test_validate_spec_reports_resource_count():
    spec = load_spec()
    assert validate_spec(spec) == []
    with pytest.raises(DomainError, match="resources"):
        generate(spec, resources=4)


def test_start_point_is_truncated():
    spec = load_spec()
    assert start_point(spec) == (0.9, 0.9)
    assert start_point(spec, resources=1) == (0.9,)
