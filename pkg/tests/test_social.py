import numpy as np
import pytest

from egmarket.model import make_scenario
from egmarket.social import solve_social_optimum
from egmarket.solver import solve_market
from egmarket.utility import Leontief, Linear
from egmarket.verification import is_feasible
from helpers import cd_2x2, energy_1a, leontief_1r, linear_2x2, table1


def test_symmetric_total_dominates_market():
    u = Leontief({0: 1.0, 1: 2.0})
    s = make_scenario([("a", 4.0), ("b", 6.0)], [("p", 1.0, u), ("q", 1.0, u)])
    so = solve_social_optimum(s, [1.0, 1.0])
    me = solve_market(s)
    assert so.utilities.sum() >= me.utilities.sum() - 1e-6
    assert so.utilities.sum() == pytest.approx(3.0, abs=1e-6)


def test_degenerate_weights_give_everything_to_one_agent():
    s = make_scenario([("a", 1.0)], [("p", 1.0, Linear({0: 1.0})), ("q", 1.0, Linear({0: 1.0}))])
    so = solve_social_optimum(s, [1.0, 0.0])
    assert so.utilities[0] == pytest.approx(1.0, abs=1e-6)
    assert so.utilities[1] == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("factory", [cd_2x2, linear_2x2, leontief_1r, energy_1a, table1])
def test_dominance_with_budget_weights(factory):
    s = factory()
    so = solve_social_optimum(s)
    me = solve_market(s)
    assert np.allclose(so.weights, s.budgets)
    assert so.objective >= s.budgets @ me.utilities - 1e-6
    assert is_feasible(s, so.allocation, tol=1e-6)
    assert np.all(so.capacity_duals >= 0) and np.all(so.energy_duals >= 0)


@pytest.mark.parametrize("beta", [1.0, 1.5, 2.0, 2.5, 3.0])
def test_total_utility_dominates_over_beta_sweep(beta):
    s = table1(beta_cpu=beta)
    so = solve_social_optimum(s, [1.0, 1.0])
    me = solve_market(s)
    assert so.utilities.sum() >= me.utilities.sum() - 1e-6


def test_social_optimum_favours_one_provider():
    # at the default market the SO puts nearly all utility on one side
    so = solve_social_optimum(table1(beta_cpu=3.0))
    me = solve_market(table1(beta_cpu=3.0))
    assert so.utilities.min() < me.utilities.min()


def test_social_residuals():
    so = solve_social_optimum(table1())
    assert max(so.solver_stats["residuals"].values()) <= 1e-6
    assert so.solver_stats["objective_kind"] == "linear"
