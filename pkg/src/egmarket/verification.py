"""Equilibrium certificates, welfare, and brute-force oracles for small markets."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from egmarket.best_response import BestResponse, DegeneratePrices, UnboundedDemand, best_response
from egmarket.model import MarketScenario, aggregate_usage, eval_energy
from egmarket.pricing import ClearingReport, assemble_prices, check_clearing
from egmarket.utility import Leontief


@dataclass
class AgentCertificate:
    name: str
    c1_gap: float
    stationarity: float
    budget_residual: float
    nu: np.ndarray
    nu_complementarity: float
    best_response: BestResponse | None
    note: str = ""


@dataclass
class CertificateReport:
    c1_gaps: np.ndarray
    stationarity: float
    slackness: float
    feasibility: float
    dual_feasible: bool
    budget_residuals: np.ndarray
    nash_welfare: float
    clearing: ClearingReport
    agents: list[AgentCertificate] = field(default_factory=list)
    tol: float = 1e-4
    kkt_tol: float = 1e-4

    @property
    def kkt(self) -> dict:
        return {"stationarity": self.stationarity, "slackness": self.slackness, "feasibility": self.feasibility}

    @property
    def passed(self) -> bool:
        return bool(
            np.all(self.c1_gaps <= self.tol)
            and self.stationarity <= self.kkt_tol
            and self.slackness <= self.kkt_tol
            and self.feasibility <= self.kkt_tol
            and self.dual_feasible
            and np.all(np.abs(self.budget_residuals) <= self.kkt_tol)
        )

    def summary(self) -> str:
        lines = [
            f"certificate: {'PASS' if self.passed else 'FAIL'} (tol={self.tol:g}, kkt_tol={self.kkt_tol:g})",
            f"  stationarity={self.stationarity:.3e} slackness={self.slackness:.3e} feasibility={self.feasibility:.3e}",
            f"  nash_welfare={self.nash_welfare:.10g}",
        ]
        for a in self.agents:
            lines.append(f"  {a.name}: c1_gap={a.c1_gap:.3e} stationarity={a.stationarity:.3e} "
                         f"budget_residual={a.budget_residual:.3e} {a.note}".rstrip())
        return "\n".join(lines)


def nash_welfare(s: MarketScenario, x) -> float:
    """sum_n B_n log U_n(x_n); -inf when some agent has zero utility."""
    x = np.asarray(x, dtype=float)
    u = np.array([a.utility.value(x[n]) for n, a in enumerate(s.agents)])
    if np.any(u <= 0):
        return -math.inf
    return float(np.sum(s.budgets * np.log(u)))


def _agent_stationarity(a, x_n, prices, budget, threshold, rel_bind=1e-6):
    """Fit the lifted non-negativity and epigraph multipliers for one agent.

    Variables are the agent's resource quantities plus one epigraph value per
    Leontief leaf (set to the leaf's value). Stationarity of the budget-weighted
    log utility reads, per quantity k and leaf l,

        B dlogU/dx_k + sum_l eta_lk - p_k + nu_k = 0
        B dlogU/dt_l - sum_k eta_lk d_lk + nu_l = 0

    where eta is allowed only on binding leaf rows and nu only on inactive
    coordinates. Returns (residual max-norm, nu, max |nu * x|).
    """
    u = a.utility
    K = x_n.size
    leaves = u.leontief_leaves()
    t = np.array([lf.value(x_n) for lf in leaves])
    val, g, _ = u.lifted(x_n, t)
    if not val > 0:
        return math.inf, np.zeros(K + len(leaves)), 0.0
    z = np.concatenate([x_n, t])
    rhs = np.concatenate([prices, np.zeros(len(leaves))]) - budget * g / val
    cols = []
    for l, lf in enumerate(leaves):
        for k, d in lf.weights:
            if x_n[k] - d * t[l] <= rel_bind * max(1.0, x_n[k]):
                c = np.zeros(K + len(leaves))
                c[k] = 1.0
                c[K + l] = -d
                cols.append(c)
    inactive = np.flatnonzero(z <= threshold)
    for j in inactive:
        c = np.zeros(K + len(leaves))
        c[j] = 1.0
        cols.append(c)
    if cols:
        M = np.array(cols).T
        y, _ = nnls(M, rhs, maxiter=50 * M.shape[1])
        r = M @ y - rhs
        nu = np.zeros(z.size)
        nu[inactive] = y[len(cols) - inactive.size:]
    else:
        r = -rhs
        nu = np.zeros(z.size)
    return float(np.max(np.abs(r))), nu, float(np.max(np.abs(nu * z), initial=0.0))


def certify(s: MarketScenario, r, tol: float = 1e-4, kkt_tol: float | None = None,
            threshold: float = 1e-7) -> CertificateReport:
    """Check that (r.prices, r.allocation) is a market equilibrium of ``s``.

    ``r`` needs ``allocation``, ``capacity_duals`` and ``energy_duals``; prices
    are re-assembled from the duals so that the decomposition is checked too.
    """
    kkt_tol = tol if kkt_tol is None else kkt_tol
    x = np.asarray(r.allocation, dtype=float)
    if x.shape != (s.n_agents, s.n_resources):
        raise ValueError("allocation shape does not match the scenario")
    gamma = np.asarray(r.capacity_duals, dtype=float)
    lam = np.asarray(r.energy_duals, dtype=float)
    dual_ok = bool(np.all(gamma >= 0) and np.all(lam >= 0))
    dec = assemble_prices(s, x, np.maximum(gamma, 0), np.maximum(lam, 0))
    prices = np.asarray(getattr(r, "prices", dec.prices), dtype=float)
    scale = s.scale()

    agents = []
    for n, a in enumerate(s.agents):
        u_star = a.utility.value(x[n])
        note = ""
        try:
            br = best_response(a, prices)
            gap = (br.utility - u_star) / max(1.0, br.utility)
            if br.capped:
                note = "best response capped"
        except (UnboundedDemand, DegeneratePrices) as exc:
            br, gap, note = None, math.inf, str(exc)
        stat, nu, nu_comp = _agent_stationarity(a, x[n], prices, a.budget, threshold)
        spend = float(prices @ x[n])
        if not np.any(prices > 0):
            note = (note + "; degenerate prices").strip("; ")
        agents.append(AgentCertificate(a.name, float(gap), stat / scale, (spend - a.budget) / max(1.0, a.budget),
                                       nu, nu_comp / scale, br, note))

    clearing = check_clearing(s, x, dec, gamma, lam, kkt_tol * scale)
    slack = max([c.product for c in clearing.checks if c.kind != "decomposition"] + [0.0], key=abs) / scale
    slack = max(abs(slack), max(a.nu_complementarity for a in agents))
    pdiff = float(np.max(np.abs(prices - dec.prices), initial=0.0)) / scale
    stationarity = max(max(a.stationarity for a in agents), pdiff)
    feas = max(clearing.max_violation / scale, float(max(0.0, -np.min(x))))
    return CertificateReport(
        c1_gaps=np.array([a.c1_gap for a in agents]),
        stationarity=stationarity,
        slackness=slack,
        feasibility=feas,
        dual_feasible=dual_ok,
        budget_residuals=np.array([a.budget_residual for a in agents]),
        nash_welfare=nash_welfare(s, x),
        clearing=clearing,
        agents=agents,
        tol=tol,
        kkt_tol=kkt_tol,
    )


def is_feasible(s: MarketScenario, x, tol: float = 1e-9) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != (s.n_agents, s.n_resources) or np.any(x < -tol):
        return False
    xbar = aggregate_usage(x)
    caps = s.capacities
    if np.any(xbar > caps + tol * np.maximum(1.0, np.where(np.isfinite(caps), caps, 0.0))):
        return False
    return all(eval_energy(c, xbar) <= c.limit * (1 + tol) for c in s.energy_constraints)


class TooLarge(ValueError):
    pass


def _upper_bounds(s: MarketScenario) -> np.ndarray:
    """Per-resource bound on aggregate usage implied by capacities and energy rows."""
    ub = s.capacities.copy()
    for c in s.energy_constraints:
        for k, b in c.exponents:
            ub[k] = min(ub[k], c.limit ** (1.0 / b))
    return ub


def brute_force_optimum(s: MarketScenario, grid_step: float, max_dims: int = 6, chunk: int = 512):
    """Exhaustive grid search for the Nash-welfare maximiser.

    Only quantities an agent values are gridded; all others stay at zero.
    Returns (allocation, log welfare) of the best feasible grid point.
    """
    dims = [(n, k) for n, a in enumerate(s.agents) for k in sorted(a.utility.resources())]
    if len(dims) > max_dims:
        raise TooLarge(f"too large: {len(dims)} decision dimensions exceed {max_dims}")
    ub = _upper_bounds(s)
    if not np.all(np.isfinite(ub[[k for _, k in dims]])):
        raise TooLarge("too large: unbounded grid range")
    N, K = s.n_agents, s.n_resources

    # per-agent grids and their log utilities
    grids, logs = [], []
    for n, a in enumerate(s.agents):
        ks = [k for m, k in dims if m == n]
        axes = [np.arange(0.0, ub[k] + 0.5 * grid_step, grid_step) for k in ks]
        axes = [ax[ax <= ub[k] * (1 + 1e-12)] for ax, k in zip(axes, ks)]
        pts = np.array(list(itertools.product(*axes))) if ks else np.zeros((1, 0))
        full = np.zeros((pts.shape[0], K))
        full[:, ks] = pts
        with np.errstate(divide="ignore"):
            lu = np.log(np.array([a.utility.value(row) for row in full])) * a.budget
        keep = np.isfinite(lu)
        grids.append(full[keep])
        logs.append(lu[keep])

    caps = s.capacities
    best_val, best_x = -math.inf, None
    head = list(itertools.product(*[range(len(g)) for g in grids[:-1]]))
    last_g, last_l = grids[-1], logs[-1]
    for start in range(0, len(head), chunk):
        block = head[start:start + chunk]
        base = np.array([sum((grids[n][i] for n, i in enumerate(ix)), np.zeros(K)) for ix in block])
        base_l = np.array([sum(logs[n][i] for n, i in enumerate(ix)) for ix in block])
        xbar = base[:, None, :] + last_g[None, :, :]
        ok = np.all(xbar <= caps + 1e-12 * np.maximum(1, np.where(np.isfinite(caps), caps, 0)), axis=2)
        for c in s.energy_constraints:
            e = np.sum(xbar[:, :, c.index] ** c.beta, axis=2)
            ok &= e <= c.limit * (1 + 1e-12)
        val = np.where(ok, base_l[:, None] + last_l[None, :], -math.inf)
        i, j = np.unravel_index(int(np.argmax(val)), val.shape)
        if val[i, j] > best_val:
            best_val = float(val[i, j])
            x = np.zeros((N, K))
            for n, idx in enumerate(block[i]):
                x[n] = grids[n][idx]
            x[N - 1] = last_g[j]
            best_x = x
    return best_x, best_val


@dataclass
class FairnessReport:
    sums: list[float]
    skipped: list[int]
    passed: bool


def proportional_fairness_check(s: MarketScenario, x_star, alternatives, tol: float = 1e-6) -> FairnessReport:
    """Weighted proportional utility change of each feasible alternative vs x_star."""
    x_star = np.asarray(x_star, dtype=float)
    u_star = np.array([a.utility.value(x_star[n]) for n, a in enumerate(s.agents)])
    if np.any(u_star <= 0):
        raise ValueError("x_star must give every agent positive utility")
    sums, skipped = [], []
    for j, alt in enumerate(alternatives):
        alt = np.asarray(alt, dtype=float)
        if not is_feasible(s, alt):
            skipped.append(j)
            continue
        u = np.array([a.utility.value(alt[n]) for n, a in enumerate(s.agents)])
        sums.append(float(np.sum(s.budgets * (u - u_star) / u_star)))
    return FairnessReport(sums, skipped, all(v <= tol for v in sums))


def random_feasible_allocations(s: MarketScenario, count: int, rng: np.random.Generator, around=None,
                                spread: float = 0.5) -> list[np.ndarray]:
    """Random allocations pulled back into the feasible set by scaling.

    With ``around`` the draws are multiplicative perturbations of that
    allocation; otherwise independent uniform draws over valued resources.
    """
    ub = np.where(np.isfinite(_upper_bounds(s)), _upper_bounds(s), 1.0)
    mask = np.zeros((s.n_agents, s.n_resources))
    for n, a in enumerate(s.agents):
        mask[n, sorted(a.utility.resources())] = 1.0
    out = []
    for _ in range(count):
        if around is not None:
            x = np.asarray(around) * np.exp(spread * rng.standard_normal(mask.shape)) * mask
            x[:, ~s.covered()] = np.asarray(around)[:, ~s.covered()]
        else:
            x = rng.uniform(size=mask.shape) * ub * mask
        lo, hi = 0.0, 1.0
        if not is_feasible(s, x):
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if is_feasible(s, mid * x):
                    lo = mid
                else:
                    hi = mid
            x = lo * x
        out.append(x)
    return out
