import json
import math

import numpy as np
import pytest

from egmarket.scenario_io import (
    ScenarioFileError, ScenarioSource, bundled_path, bundled_scenarios, load_result, load_scenario,
    load_source, parse_document, parse_solver, result_document, write_result,
)
from egmarket.solver import solve_market
from egmarket.utility import Leontief, Nest
from egmarket.verification import certify

MINIMAL = """
params:
  b: 2
resources:
  - {name: cpu, capacity: 10}
  - {name: ram, capacity: unbounded}
agents:
  - name: a
    budget: $b
    utility: {leontief: {cpu: 1, ram: 2}}
  - name: c
    budget: "$b * 1.5"
    utility:
      nest:
        rho: 0.5
        children:
          - {weight: 2, utility: {linear: {cpu: 1}}}
          - {utility: {ces: {rho: -1, weights: {cpu: 1}}}}
sweeps:
  - {name: s1, parameter: params.b, from: 1, to: 3, steps: 3}
"""


def write(tmp_path, text, name="x.scenario"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_bundled_table1():
    s, sweeps = load_scenario(bundled_path("table1.scenario"))
    assert s.n_agents == 2 and s.n_resources == 6
    assert s.resource_names == ["cpu_mec", "ram_mec", "bw_mec", "cpu_cloud", "ram_cloud", "bw_cloud"]
    u = s.agents[0].utility
    assert isinstance(u, Nest) and u.leontief_leaves()[0] == Leontief({0: 2, 1: 8, 2: 10})
    assert s.agents[1].utility.leontief_leaves()[1] == Leontief({3: 10, 4: 16, 5: 6})
    assert math.isinf(s.capacities[3])
    assert [sw.name for sw in sweeps] == ["beta_cpu", "beta_radio", "budget", "local_energy"]
    assert np.allclose(sweeps[3].values(), np.arange(10, 100, 10))


def test_all_bundled_scenarios_load():
    names = {p.name for p in bundled_scenarios()}
    assert len(names) >= 6 and "table1_both_binding.scenario" in names
    for p in bundled_scenarios():
        load_scenario(p)


def test_expressions_and_nesting(tmp_path):
    s, sweeps = load_scenario(write(tmp_path, MINIMAL))
    assert np.allclose(s.budgets, [2.0, 3.0])
    assert s.agents[1].utility.rho == 0.5
    assert s.agents[1].utility.children[1][0] == 1.0
    src = load_source(write(tmp_path, MINIMAL))
    assert np.allclose(src.with_value("params.b", 4).scenario().budgets, [4.0, 6.0])


def test_negative_budget_rejected(tmp_path):
    bad = MINIMAL.replace("b: 2", "b: -2")
    with pytest.raises(ScenarioFileError, match="budget > 0 required"):
        load_scenario(write(tmp_path, bad))


def test_unknown_sweep_path(tmp_path):
    bad = MINIMAL.replace("parameter: params.b", "parameter: params.nope")
    with pytest.raises(ScenarioFileError, match="unknown parameter"):
        load_scenario(write(tmp_path, bad))
    bad = MINIMAL.replace("parameter: params.b", "parameter: agents.zzz.budget")
    with pytest.raises(ScenarioFileError, match="unknown parameter"):
        load_scenario(write(tmp_path, bad))


def test_other_sweep_paths(tmp_path):
    src = load_source(bundled_path("table1.scenario"))
    assert src.with_value("agents.radio_intensive.budget", 0.7).scenario().budgets[0] == 0.7
    assert src.with_value("resources.cpu_mec.capacity", 20).scenario().capacities[0] == 20
    s = src.with_value("energy_constraints.local.exponents.bw_mec", 2.0).scenario()
    assert dict(s.energy_constraints[1].exponents)[2] == 2.0


def test_parse_error_has_position(tmp_path):
    with pytest.raises(ScenarioFileError, match=r"x\.scenario:3:\d+: parse error"):
        load_scenario(write(tmp_path, "resources:\n  - {name: a\nagents: []\n"))


def test_unknown_resource_and_kind(tmp_path):
    with pytest.raises(ScenarioFileError, match="unknown resource 'gpu'"):
        load_scenario(write(tmp_path, MINIMAL.replace("linear: {cpu: 1}", "linear: {gpu: 1}")))
    with pytest.raises(ScenarioFileError, match="unknown utility kind"):
        load_scenario(write(tmp_path, MINIMAL.replace("linear: {cpu: 1}", "quadratic: {cpu: 1}")))


def test_unknown_parameter_reference(tmp_path):
    with pytest.raises(ScenarioFileError, match=r"unknown parameter \$q"):
        load_scenario(write(tmp_path, MINIMAL.replace("budget: $b", "budget: $q")))


def test_expression_safety():
    with pytest.raises(ScenarioFileError, match="unsupported expression"):
        ScenarioSource(parse_document(MINIMAL.replace("$b * 1.5", "__import__('os')"))).scenario()


def test_solver_section():
    cfg = parse_solver({"solver": {"kkt_tolerance": "1e-7", "max_outer": 40}})
    assert cfg.kkt_tolerance == 1e-7 and cfg.max_outer == 40
    with pytest.raises(ScenarioFileError, match="unknown settings"):
        parse_solver({"solver": {"speed": 3}})


def test_result_document_round_trip(tmp_path):
    s, _ = load_scenario(bundled_path("table1.scenario"))
    r = solve_market(s)
    cert = certify(s, r)
    path = tmp_path / "r.json"
    write_result(path, result_document(s, r, cert))
    doc = json.loads(path.read_text())
    assert doc["certificate"]["passed"] is True
    back = load_result(path, s)
    assert np.array_equal(back.allocation, r.allocation)
    assert np.array_equal(back.prices, r.prices)
    assert certify(s, back).passed


def test_result_mismatch(tmp_path):
    s, _ = load_scenario(bundled_path("table1.scenario"))
    other, _ = load_scenario(bundled_path("cobb_douglas_2x2.scenario"))
    path = tmp_path / "r.json"
    r = solve_market(other)
    write_result(path, result_document(other, r))
    with pytest.raises(ScenarioFileError, match="do not match"):
        load_result(path, s)
