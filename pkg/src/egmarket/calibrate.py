"""Search unspecified scenario parameters for values that reproduce the sweep shapes.

The scenario's ``calibration`` section names the sweeps to inspect and the
grid to search::

    calibration:
      beta_sweeps: [beta_cpu, beta_radio]   # utilities must not rise with the exponent
      budget_sweep: budget                  # ME must be less budget-sensitive than SO
      energy_sweep: local_energy            # cloud radio unimodal, total radio non-decreasing
      radio_resources: [bw_mec, bw_cloud]
      cloud_radio: bw_cloud
      search:
        params.energy_total: [60, 100]
        params.energy_local: [50, 70]

Grid points are tried in row-major order and the first one passing every check wins.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from egmarket.experiments import SweepResult, run_sweep
from egmarket.scenario_io import ScenarioFileError, ScenarioSource
from egmarket.solver import SolverConfig

logger = logging.getLogger(__name__)

MONO_TOL = 1e-6


def non_increasing(y, tol: float = MONO_TOL) -> bool:
    return bool(np.all(np.diff(np.asarray(y, dtype=float)) <= tol))


def non_decreasing(y, tol: float = MONO_TOL) -> bool:
    return bool(np.all(np.diff(np.asarray(y, dtype=float)) >= -tol))


def unimodal(y, tol: float = MONO_TOL, interior: bool = True) -> bool:
    """Non-decreasing up to the maximum, non-increasing after it.

    With ``interior`` the peak may not sit at either end, so the curve really
    rises and then falls.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0 or not np.all(np.isfinite(y)):
        return False
    j = int(np.argmax(y))
    if interior:
        if j == 0 or j == y.size - 1:
            return False
        if y[j] - y[0] <= tol or y[j] - y[-1] <= tol:
            return False
    return non_decreasing(y[: j + 1], tol) and non_increasing(y[j:], tol)


@dataclass
class ShapeReport:
    checks: dict[str, bool]
    details: dict[str, str] = field(default_factory=dict)
    results: dict[str, SweepResult] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _section(src: ScenarioSource) -> dict:
    cal = src.doc.get("calibration")
    if not isinstance(cal, dict):
        raise ScenarioFileError(f"{src.path}: no calibration section")
    return cal


def _me(res: SweepResult) -> np.ndarray:
    return np.array([r.me_utilities for r in res.rows])


def _so(res: SweepResult) -> np.ndarray:
    return np.array([r.so_utilities for r in res.rows])


def shape_checks(src: ScenarioSource, cfg: SolverConfig | None = None, only=None) -> ShapeReport:
    """Run the calibration sweeps and evaluate the qualitative checks.

    ``only`` limits the evaluation to a subset of {"beta_monotone", "fairness",
    "budget_range", "energy_shape"}.
    """
    cal = _section(src)
    want = set(only) if only else {"beta_monotone", "fairness", "budget_range", "energy_shape"}
    sweeps = {sw.name: sw for sw in src.sweeps()}
    cfg = cfg or src.solver_config()
    rep = ShapeReport({})

    def get(name):
        if name not in sweeps:
            raise ScenarioFileError(f"calibration refers to unknown sweep {name!r}")
        if name not in rep.results:
            rep.results[name] = run_sweep(src, sweeps[name], cfg)
        return rep.results[name]

    beta_names = list(cal.get("beta_sweeps", []))
    budget_name = cal.get("budget_sweep")
    if want & {"beta_monotone", "fairness"} and beta_names:
        mono, fair = True, True
        for name in beta_names:
            res = get(name)
            ok = all(r.ok for r in res.rows)
            me = _me(res)
            m = ok and all(non_increasing(me[:, n]) for n in range(me.shape[1]))
            f = ok and bool(np.all(me.min(axis=1) >= _so(res).min(axis=1) - 1e-9))
            rep.details[f"{name}.monotone"] = str(m)
            mono &= m
            fair &= f
        if "beta_monotone" in want:
            rep.checks["beta_monotone"] = mono
        if "fairness" in want:
            rep.checks["fairness"] = fair
    if budget_name and want & {"fairness", "budget_range"}:
        res = get(budget_name)
        ok = all(r.ok for r in res.rows)
        me, so = _me(res), _so(res)
        if "fairness" in want:
            rep.checks["fairness"] = rep.checks.get("fairness", True) and ok and bool(
                np.all(me.min(axis=1) >= so.min(axis=1) - 1e-9))
        if "budget_range" in want:
            rep.checks["budget_range"] = ok and bool(np.all(np.ptp(me, axis=0) < np.ptp(so, axis=0)))
    if "energy_shape" in want and cal.get("energy_sweep"):
        res = get(cal["energy_sweep"])
        radio = [res.resources.index(k) for k in cal["radio_resources"]]
        cloud = res.resources.index(cal["cloud_radio"])
        xbar = np.array([r.xbar for r in res.rows])
        ok = all(r.ok for r in res.rows)
        cloud_curve, total = xbar[:, cloud], xbar[:, radio].sum(axis=1)
        rep.details["cloud_radio"] = np.array2string(cloud_curve, precision=6)
        rep.checks["energy_shape"] = ok and unimodal(cloud_curve) and non_decreasing(total)
    return rep


@dataclass
class CalibrationResult:
    values: dict[str, float]
    report: ShapeReport
    tried: int

    @property
    def found(self) -> bool:
        return self.report.passed


def calibrate(src: ScenarioSource, cfg: SolverConfig | None = None, search: dict | None = None,
              only=None) -> tuple[ScenarioSource, CalibrationResult]:
    """First grid point (row-major) whose sweeps pass every shape check.

    Returns the calibrated source and the result; when no point passes the
    original source is returned with ``found == False``.
    """
    grid = search if search is not None else _section(src).get("search") or {}
    keys = list(grid)
    tried = 0
    last = None
    for combo in itertools.product(*(grid[k] for k in keys)):
        values = {k: float(v) for k, v in zip(keys, combo)}
        cand = src.with_overrides(values)
        tried += 1
        try:
            rep = shape_checks(cand, cfg, only)
        except ValueError as exc:
            logger.info("calibration point %s rejected: %s", values, exc)
            continue
        logger.info("calibration point %s: %s", values, rep.checks)
        last = CalibrationResult(values, rep, tried)
        if rep.passed:
            return cand, last
    return src, last or CalibrationResult({}, ShapeReport({"search": False}), tried)
