import numpy as np
import pytest

from egmarket.model import (
    UNBOUNDED, EnergyConstraint, ScenarioError, aggregate_usage, energy_gradient, energy_hessian_diag,
    eval_energy, make_scenario, require_valid, validate_scenario,
)
from egmarket.utility import Leontief, Linear, utility_sum
from helpers import fd_gradient, table1


def test_table1_structure():
    s = table1()
    assert s.n_agents == 2 and s.n_resources == 6
    assert s.resource_names == ["cpu_mec", "ram_mec", "bw_mec", "cpu_cloud", "ram_cloud", "bw_cloud"]
    assert not s.resources[3].bounded and s.resources[0].bounded
    assert list(s.covered()) == [True, True, True, True, False, True]
    assert np.allclose(s.budgets, [0.5, 0.5])
    assert validate_scenario(s).ok


def test_energy_terms():
    c = EnergyConstraint(0, {0: 2.0, 2: 1.0}, 10.0)
    xbar = np.array([3.0, 5.0, 2.0])
    assert eval_energy(c, xbar) == pytest.approx(11.0)
    assert np.allclose(energy_gradient(c, xbar), [6.0, 0.0, 1.0])
    assert np.allclose(energy_gradient(c, xbar), fd_gradient(lambda z: eval_energy(c, z), xbar))
    assert np.allclose(energy_hessian_diag(c, xbar), [2.0, 0.0, 0.0])


def test_energy_hessian_at_zero_usage():
    c = EnergyConstraint(0, {0: 1.5}, 10.0)
    assert energy_hessian_diag(c, np.zeros(1))[0] == 0.0


def test_aggregate_and_rescale():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(aggregate_usage(x), [4.0, 6.0])
    s = make_scenario([("a", 1.0)], [("p", 1.0, Linear({0: 1})), ("q", 2.0, Linear({0: 1}))])
    assert np.allclose(s.with_budgets([3.0, 4.0]).budgets, [3.0, 4.0])


@pytest.mark.parametrize("kwargs, fragment", [
    (dict(budget=-1.0), "budget > 0 required"),
    (dict(capacity=0.0), "capacity > 0 required"),
    (dict(resource=7), "unknown resource 7"),
    (dict(exponent=0.5), "must be >= 1"),
    (dict(limit=-2.0), "limit > 0 required"),
])
def test_validation_messages(kwargs, fragment):
    s = make_scenario(
        [("a", kwargs.get("capacity", 1.0)), ("b", 1.0)],
        [("p", kwargs.get("budget", 1.0), Linear({kwargs.get("resource", 0): 1.0}))],
        [({1: kwargs.get("exponent", 2.0)}, kwargs.get("limit", 3.0))],
    )
    rep = validate_scenario(s)
    assert not rep.ok
    assert any(fragment in m for m in rep.violations), rep.violations
    with pytest.raises(ScenarioError):
        require_valid(s)


def test_unbounded_utility_detected():
    s = make_scenario([("free", UNBOUNDED)], [("p", 1.0, Linear({0: 1.0}))])
    assert any("unbounded" in m for m in validate_scenario(s).violations)


def test_leontief_needs_one_limited_resource():
    # the free resource is pinned by the bounded one inside the bundle
    s = make_scenario([("cap", 5.0), ("free", UNBOUNDED)], [("p", 1.0, Leontief({0: 1.0, 1: 2.0}))])
    assert validate_scenario(s).ok
    s = make_scenario([("cap", 5.0), ("free", UNBOUNDED)], [("p", 1.0, Linear({0: 1.0, 1: 2.0}))])
    assert not validate_scenario(s).ok


def test_duplicate_names():
    s = make_scenario([("a", 1.0), ("a", 1.0)], [("p", 1.0, utility_sum(Linear({0: 1}), Linear({1: 1})))])
    assert any("duplicate" in m for m in validate_scenario(s).violations)
