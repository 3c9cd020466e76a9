import numpy as np
import pytest

from egmarket.experiments import (
    CSV_VERSION, columns, emit_report, jain_index, plot_data, read_csv, run_all, run_sweep, to_csv,
    write_csv,
)
from egmarket.scenario_io import SweepSpec, bundled_path, load_source


@pytest.fixture(scope="module")
def src():
    return load_source(bundled_path("table1.scenario"))


@pytest.fixture(scope="module")
def budget_sweep(src):
    return run_sweep(src, SweepSpec("budget", "params.budget_radio", 0.1, 0.9, 5))


def test_jain_index():
    assert jain_index([1, 1, 1]) == pytest.approx(1.0)
    assert jain_index([1, 0]) == pytest.approx(0.5)
    assert jain_index([0, 0]) == 0.0


def test_rows_are_certified(budget_sweep):
    assert len(budget_sweep.rows) == 5
    assert all(r.ok and r.certified for r in budget_sweep.rows)
    assert np.allclose([r.value for r in budget_sweep.rows], np.linspace(0.1, 0.9, 5))
    # budgets sum to one along the sweep
    r = budget_sweep.rows[0]
    assert np.isclose(r.prices @ r.me_usage.sum(axis=0), 1.0, rtol=1e-6)


def test_csv_round_trip(budget_sweep, tmp_path):
    path = write_csv(budget_sweep, tmp_path / "b.csv")
    info, rows = read_csv(path)
    assert info["version"] == CSV_VERSION and info["parameter"] == "params.budget_radio"
    assert list(rows[0]) == columns(budget_sweep)
    for mem, back in zip(budget_sweep.rows, rows):
        assert back["value"] == mem.value
        assert back["me_u_radio_intensive"] == mem.me_utilities[0]
        assert back["so_u_cpu_intensive"] == mem.so_utilities[1]
        assert back["price_bw_cloud"] == mem.prices[5]
        assert back["lambda_total"] == mem.lam[0]
        assert back["me_x_cpu_intensive_cpu_cloud"] == mem.me_usage[1, 3]
        assert back["certified"] is True


def test_csv_is_deterministic(src):
    sw = SweepSpec("b", "params.budget_radio", 0.2, 0.8, 3)
    assert to_csv(run_sweep(src, sw)) == to_csv(run_sweep(src, sw))


def test_plot_data_legends(budget_sweep):
    head = plot_data(budget_sweep).splitlines()[0].split(",")
    assert head[:7] == ["params.budget_radio", "Radio_Intensive_SO", "Radio_Intensive_FM",
                        "Cpu_Intensive_SO", "Cpu_Intensive_FM", "Total_SO", "Total_FM"]
    assert "Usage_bw_cloud" in head


def test_report_single_point(src):
    res = run_sweep(src, SweepSpec("one", "params.beta_cpu", 2.0, 2.0, 1))
    text = emit_report([res])
    assert "1 points, 1 certified, 0 failed" in text
    assert "at every point" in text


def test_failed_point_is_flagged_and_sweep_continues(src):
    res = run_sweep(src, SweepSpec("bad", "params.budget_radio", 0.5, 0.0, 2))
    assert [r.ok for r in res.rows] == [True, False]
    assert "budget > 0" in res.rows[1].status
    text = emit_report([res])
    assert "2 points, 1 certified, 1 failed" in text and "failure at 0" in text
    # failed rows serialise as NaN without breaking the CSV
    assert "nan" in to_csv(res)


def test_emit_report_requires_rows(src, budget_sweep):
    from egmarket.experiments import SweepResult
    with pytest.raises(ValueError):
        emit_report([SweepResult(budget_sweep.sweep, [], [], [])])


def test_per_sweep_overrides(src):
    sw = SweepSpec("o", "params.beta_cpu", 1.0, 1.0, 1, {"params.energy_local": 40.0})
    res = run_sweep(src, sw)
    assert res.rows[0].lam[1] > 1e-3  # local row binds at the override


def test_run_all_writes_files(src, tmp_path):
    results, paths = run_all(src, tmp_path, only=["budget"])
    names = sorted(p.name for p in paths)
    assert names == ["budget.csv", "budget.plot.csv", "report.txt"]
    assert len(results[0].rows) == 9
