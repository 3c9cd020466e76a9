"""Parameter sweeps comparing market equilibrium (ME) with the social optimum (SO)."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from egmarket.scenario_io import ScenarioSource, SweepSpec
from egmarket.social import solve_social_optimum
from egmarket.solver import SolverConfig, SolverError, solve_market
from egmarket.verification import certify

logger = logging.getLogger(__name__)

CSV_VERSION = "egmarket-sweep/1"
_FMT = "%.17g"


def jain_index(u) -> float:
    u = np.asarray(u, dtype=float)
    sq = float(u @ u)
    return float(u.sum() ** 2 / (u.size * sq)) if sq > 0 else 0.0


@dataclass
class SweepRow:
    value: float
    status: str
    certified: bool
    me_utilities: np.ndarray
    so_utilities: np.ndarray
    me_usage: np.ndarray  # agents x resources
    so_usage: np.ndarray
    prices: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def me_total(self) -> float:
        return float(self.me_utilities.sum())

    @property
    def so_total(self) -> float:
        return float(self.so_utilities.sum())

    @property
    def me_min(self) -> float:
        return float(self.me_utilities.min())

    @property
    def so_min(self) -> float:
        return float(self.so_utilities.min())

    @property
    def xbar(self) -> np.ndarray:
        return self.me_usage.sum(axis=0)


@dataclass
class SweepResult:
    sweep: SweepSpec
    agents: list[str]
    resources: list[str]
    constraints: list[str]
    rows: list[SweepRow] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        cols = columns(self)
        j = cols.index(name)
        return np.array([_row_values(self, r)[j] for r in self.rows], dtype=float)


def _failed_row(value, status, N, K, I) -> SweepRow:
    nan = math.nan
    return SweepRow(value, status, False, np.full(N, nan), np.full(N, nan), np.full((N, K), nan),
                    np.full((N, K), nan), np.full(K, nan), np.full(K, nan), np.full(I, nan))


def run_point(src: ScenarioSource, value: float, cfg: SolverConfig, weights=None, tol=1e-4) -> SweepRow:
    s = src.scenario()
    N, K, I = s.n_agents, s.n_resources, len(s.energy_constraints)
    try:
        me = solve_market(s, cfg)
        so = solve_social_optimum(s, weights, cfg)
    except SolverError as exc:
        logger.warning("sweep point %g failed: %s", value, exc)
        return _failed_row(value, f"solver error: {exc}", N, K, I)
    cert = certify(s, me, tol)
    status = "ok" if cert.passed else "certificate failed"
    return SweepRow(value, status, cert.passed, me.utilities, so.utilities, me.allocation, so.allocation,
                    me.prices, me.capacity_duals, me.energy_duals)


def run_sweep(src: ScenarioSource, sweep: SweepSpec, cfg: SolverConfig | None = None,
              weights=None, tol: float = 1e-4) -> SweepResult:
    cfg = cfg or src.solver_config()
    base = src.with_overrides(sweep.overrides)
    s = base.scenario()
    out = SweepResult(sweep, [a.name for a in s.agents], s.resource_names,
                      [c.label for c in s.energy_constraints])
    for v in sweep.values():
        try:
            point = base.with_value(sweep.parameter, v)
            row = run_point(point, float(v), cfg, weights, tol)
        except ValueError as exc:
            row = _failed_row(float(v), f"invalid point: {exc}", len(out.agents), len(out.resources),
                              len(out.constraints))
        out.rows.append(row)
    return out


def columns(res: SweepResult) -> list[str]:
    A, R = res.agents, res.resources
    cols = ["value", "status", "certified"]
    cols += [f"me_u_{a}" for a in A] + [f"so_u_{a}" for a in A]
    cols += ["me_total", "so_total", "me_min", "so_min", "me_jain", "so_jain"]
    cols += [f"me_x_{a}_{k}" for a in A for k in R]
    cols += [f"so_x_{a}_{k}" for a in A for k in R]
    cols += [f"xbar_{k}" for k in R]
    cols += [f"price_{k}" for k in R] + [f"gamma_{k}" for k in R]
    cols += [f"lambda_{c}" for c in res.constraints]
    return cols


def _row_values(res: SweepResult, r: SweepRow) -> list:
    vals = [r.value, r.status, int(r.certified)]
    vals += list(r.me_utilities) + list(r.so_utilities)
    vals += [r.me_total, r.so_total, r.me_min, r.so_min, jain_index(r.me_utilities), jain_index(r.so_utilities)]
    vals += list(r.me_usage.ravel()) + list(r.so_usage.ravel()) + list(r.xbar)
    vals += list(r.prices) + list(r.gamma) + list(r.lam)
    return vals


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return _FMT % float(v)


def to_csv(res: SweepResult) -> str:
    buf = io.StringIO()
    sw = res.sweep
    buf.write(f"# {CSV_VERSION} sweep={sw.name} parameter={sw.parameter}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns(res))
    for r in res.rows:
        w.writerow([_fmt(v) for v in _row_values(res, r)])
    return buf.getvalue()


def write_csv(res: SweepResult, path) -> Path:
    path = Path(path)
    path.write_text(to_csv(res))
    return path


def read_csv(path) -> tuple[dict, list[dict]]:
    """Parse a sweep CSV into (header info, rows as column -> value dicts)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError(f"{path}: missing header comment")
    info = dict(tok.split("=", 1) for tok in lines[0][2:].split()[1:])
    info["version"] = lines[0][2:].split()[0]
    if info["version"] != CSV_VERSION:
        raise ValueError(f"{path}: unsupported CSV version {info['version']!r}")
    reader = csv.DictReader(lines[1:])
    rows = []
    for raw in reader:
        row = {}
        for k, v in raw.items():
            if k == "status":
                row[k] = v
            elif k == "certified":
                row[k] = bool(int(v))
            else:
                row[k] = float(v)
        rows.append(row)
    return info, rows


def _legend(name: str) -> str:
    return "_".join(part.capitalize() for part in name.replace("-", "_").split("_"))


def plot_data(res: SweepResult) -> str:
    """x/y columns per curve, named like plot legends (<Agent>_SO, <Agent>_FM, Total_*)."""
    head = [res.sweep.parameter]
    for a in res.agents:
        head += [f"{_legend(a)}_SO", f"{_legend(a)}_FM"]
    head += ["Total_SO", "Total_FM"]
    head += [f"Usage_{k}" for k in res.resources]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for r in res.rows:
        vals = [r.value]
        for n in range(len(res.agents)):
            vals += [r.so_utilities[n], r.me_utilities[n]]
        vals += [r.so_total, r.me_total] + list(r.xbar)
        w.writerow([_fmt(v) for v in vals])
    return buf.getvalue()


def _span(a: np.ndarray) -> float:
    return float(np.max(a) - np.min(a))


def emit_report(results: list[SweepResult]) -> str:
    lines = []
    for res in results:
        rows = res.rows
        if not rows:
            raise ValueError(f"sweep {res.sweep.name!r} has no rows")
        good = [r for r in rows if r.ok]
        failed = [r for r in rows if not r.ok]
        lines.append(f"sweep {res.sweep.name} ({res.sweep.parameter}): {len(rows)} points, "
                     f"{sum(r.certified for r in rows)} certified, {len(failed)} failed")
        for r in failed:
            lines.append(f"  failure at {r.value:g}: {r.status}")
        if not good:
            continue
        me = np.array([r.me_utilities for r in good])
        so = np.array([r.so_utilities for r in good])
        for n, a in enumerate(res.agents):
            lines.append(f"  {a}: ME utility [{me[:, n].min():.6g}, {me[:, n].max():.6g}] range {_span(me[:, n]):.6g}; "
                         f"SO utility [{so[:, n].min():.6g}, {so[:, n].max():.6g}] range {_span(so[:, n]):.6g}")
        fair = me.min(axis=1) >= so.min(axis=1) - 1e-9
        verdict = "at every point" if fair.all() else f"at {int(fair.sum())}/{fair.size} points"
        lines.append(f"  min-utility(ME) >= min-utility(SO) {verdict}")
    return "\n".join(lines) + "\n"


def run_all(src: ScenarioSource, out_dir, cfg: SolverConfig | None = None, weights=None,
            tol: float = 1e-4, only: list[str] | None = None) -> tuple[list[SweepResult], list[Path]]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results, paths = [], []
    for sw in src.sweeps():
        if only and sw.name not in only:
            continue
        res = run_sweep(src, sw, cfg, weights, tol)
        results.append(res)
        paths.append(write_csv(res, out / f"{sw.name}.csv"))
        p = out / f"{sw.name}.plot.csv"
        p.write_text(plot_data(res))
        paths.append(p)
    if results:
        p = out / "report.txt"
        p.write_text(emit_report(results))
        paths.append(p)
    return results, paths
