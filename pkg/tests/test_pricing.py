import numpy as np
import pytest

from egmarket.pricing import assemble_prices, check_clearing
from egmarket.solver import solve_market
from helpers import energy_1a, table1


def test_decomposition_is_capacity_plus_taxes():
    s = table1(beta_cpu=2.0)
    r = solve_market(s)
    d = r.decomposition
    assert np.allclose(d.prices, d.capacity + d.total_tax)
    assert np.allclose(d.prices, r.prices)
    # taxes only fall on resources inside each constraint's scope
    for i, c in enumerate(s.energy_constraints):
        outside = np.setdiff1d(np.arange(s.n_resources), c.index)
        assert np.all(d.taxes[i, outside] == 0)
    assert np.allclose(d.spending, r.allocation @ r.prices)


def test_energy_instance_price_is_pure_tax():
    s = energy_1a()
    r = solve_market(s)
    d = r.decomposition
    assert d.capacity[0] == 0.0
    # tax = lambda * 2x at x = 2
    assert d.taxes[0, 0] == pytest.approx(r.energy_duals[0] * 4.0, rel=1e-9)
    assert d.prices[0] == pytest.approx(0.5, abs=1e-6)


def test_assemble_rejects_bad_duals():
    s = energy_1a()
    x = np.array([[2.0]])
    with pytest.raises(ValueError, match="non-negative"):
        assemble_prices(s, x, np.array([-1.0]), np.array([0.1]))
    with pytest.raises(ValueError, match="dimensions"):
        assemble_prices(s, x, np.array([0.0, 0.0]), np.array([0.1]))


def test_clearing_report():
    s = table1()
    r = solve_market(s)
    rep = check_clearing(s, r.allocation, r.decomposition, r.capacity_duals, r.energy_duals, 1e-6)
    assert rep.passed, rep.failures()
    # a positive capacity price on a slack resource violates complementarity
    gamma = r.capacity_duals.copy()
    gamma[0] += 1.0
    bad = check_clearing(s, r.allocation, None, gamma, r.energy_duals, 1e-6)
    assert not bad.passed
    assert [c.name for c in bad.failures()] == ["cpu_mec"]


def test_unbounded_resource_must_be_free():
    s = table1()
    r = solve_market(s)
    gamma = r.capacity_duals.copy()
    gamma[4] = 0.3
    rep = check_clearing(s, r.allocation, None, gamma, r.energy_duals, 1e-6)
    assert [c.name for c in rep.failures()] == ["ram_cloud"]


def test_over_capacity_fails():
    s = energy_1a()
    rep = check_clearing(s, np.array([[3.0]]), None, np.zeros(1), np.zeros(1), 1e-6)
    assert not rep.passed and rep.max_violation == pytest.approx(5.0)
