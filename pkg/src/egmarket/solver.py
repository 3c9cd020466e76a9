"""Log-barrier interior-point solver for the externality-extended Eisenberg-Gale program.

The program maximises ``sum_n B_n log U_n(x_n)`` subject to capacity rows
``sum_n x_nk <= C_k`` and convex energy rows ``e_i(xbar) <= E_i``. Leontief
leaves are lifted to epigraph variables ``t <= x_k / d_k`` so that the barrier
subproblems are smooth; CES and Cobb-Douglas parts are handled directly.

Resources that are neither capacity-limited nor inside any energy scope are
free: they cost nothing, so an agent takes exactly what its Leontief bundles
need (``x_nk = d_k t``) and their price is zero.

The same machinery solves the social-optimum problem (``objective="linear"``),
which maximises ``sum_n w_n U_n`` instead.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import nnls

from egmarket.model import MarketScenario, energy_gradient, energy_hessian_diag, eval_energy, require_valid
from egmarket.pricing import PriceDecomposition, assemble_prices
from egmarket.utility import Leontief

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Base class for solver failures; carries the best iterate if one exists."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InfeasibleScenario(SolverError):
    pass


class MaxIterations(SolverError):
    pass


class NumericalFailure(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    kkt_tolerance: float = 1e-6
    mu0: float = 1.0
    mu_factor: float = 0.2
    max_outer: int = 60
    max_newton: int = 50
    interior_eps: float = 1e-9
    activity_threshold: float = 1e-7
    # keep following the path until mu/sum(w) is this small, so off-path
    # coordinates end up well below activity_threshold
    mu_final: float = 1e-11

    def __post_init__(self):
        for name in ("kkt_tolerance", "mu0", "mu_factor", "interior_eps", "activity_threshold", "mu_final"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.mu_factor < 1:
            raise ValueError("mu_factor must be < 1")
        if self.max_outer < 1 or self.max_newton < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class AgentBlock:
    utility: object
    xvars: np.ndarray  # length K, z index or -1
    tvars: np.ndarray  # one z index per Leontief leaf


@dataclass
class EgProblem:
    scenario: MarketScenario
    objective: str
    weights: np.ndarray
    n_vars: int
    blocks: list[AgentBlock]
    free: np.ndarray
    # every linear row reads s = A z + b > 0
    A: np.ndarray
    b: np.ndarray
    row_kind: list[str]
    row_ref: list[tuple]
    # aggregation S[k] @ z = xbar_k over the non-free variables
    S: np.ndarray
    z0: np.ndarray

    @property
    def n_epigraph(self) -> int:
        return sum(len(bk.tvars) for bk in self.blocks)

    @property
    def n_x(self) -> int:
        return self.n_vars - self.n_epigraph

    def rows(self, kind: str) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.row_kind) if k == kind], dtype=int)


@dataclass
class EquilibriumResult:
    allocation: np.ndarray
    prices: np.ndarray
    capacity_duals: np.ndarray
    energy_duals: np.ndarray
    utilities: np.ndarray
    objective: float
    decomposition: PriceDecomposition
    solver_stats: dict = field(default_factory=dict)

    @property
    def usage(self) -> np.ndarray:
        return self.allocation.sum(axis=0)


def build_problem(s: MarketScenario, objective: str = "log", weights=None, cfg: SolverConfig | None = None) -> EgProblem:
    """Lift the scenario into barrier-ready form and find a strictly feasible start."""
    require_valid(s)
    cfg = cfg or SolverConfig()
    if objective not in ("log", "linear"):
        raise ValueError("objective must be 'log' or 'linear'")
    w = s.budgets if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (s.n_agents,) or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative, one per agent, not all zero")
    if objective == "log" and np.any(w <= 0):
        raise ValueError("log objective requires positive budgets")
    K = s.n_resources
    free = ~s.covered()

    blocks: list[AgentBlock] = []
    nz = 0
    for a in s.agents:
        xv = -np.ones(K, dtype=int)
        for k in sorted(a.utility.resources()):
            if not free[k]:
                xv[k] = nz
                nz += 1
        blocks.append(AgentBlock(a.utility, xv, np.zeros(0, dtype=int)))
    for bk in blocks:
        L = len(bk.utility.leontief_leaves())
        bk.tvars = np.arange(nz, nz + L)
        nz += L

    rows_A, rows_b, kind, ref = [], [], [], []
    for j in range(nz):
        r = np.zeros(nz)
        r[j] = 1.0
        rows_A.append(r)
        rows_b.append(0.0)
        kind.append("pos")
        ref.append((j,))
    for n, bk in enumerate(blocks):
        for l, leaf in enumerate(bk.utility.leontief_leaves()):
            for k, d in leaf.weights:
                if free[k]:
                    continue
                r = np.zeros(nz)
                r[bk.xvars[k]] = 1.0
                r[bk.tvars[l]] = -d
                rows_A.append(r)
                rows_b.append(0.0)
                kind.append("epi")
                ref.append((n, l, k))
    S = np.zeros((K, nz))
    for bk in blocks:
        for k in range(K):
            if bk.xvars[k] >= 0:
                S[k, bk.xvars[k]] = 1.0
    for k, res in enumerate(s.resources):
        if res.bounded and np.any(S[k]):
            rows_A.append(-S[k])
            rows_b.append(res.capacity)
            kind.append("cap")
            ref.append((k,))
    A = np.array(rows_A).reshape(len(rows_A), nz)
    b = np.array(rows_b)

    z0 = _phase_one(s, blocks, A, b, kind, S, nz, cfg)
    prob = EgProblem(s, objective, w, nz, blocks, free, A, b, kind, ref, S, z0)
    for n, bk in enumerate(blocks):
        if _agent_utility(prob, z0, n) <= 0:
            raise InfeasibleScenario(f"agent starved: {s.agents[n].name}")
    return prob


def _phase_one(s, blocks, A, b, kind, S, nz, cfg) -> np.ndarray:
    """Scale the all-ones allocation to half of its largest feasible multiple."""
    base = np.zeros(nz)
    for bk in blocks:
        xs = bk.xvars[bk.xvars >= 0]
        base[xs] = 1.0
        for l, leaf in enumerate(bk.utility.leontief_leaves()):
            ds = [d for k, d in leaf.weights if bk.xvars[k] >= 0]
            base[bk.tvars[l]] = 0.5 / max(ds)
    alpha = math.inf
    for i, kd in enumerate(kind):
        if kd == "cap":
            use = -A[i] @ base
            if use > 0:
                alpha = min(alpha, b[i] / use)
    xbar = S @ base
    for c in s.energy_constraints:
        if eval_energy(c, xbar) <= 0:
            continue
        lo, hi = 0.0, 1.0
        while eval_energy(c, hi * xbar) < c.limit:
            hi *= 2.0
            if hi > 1e300:
                break
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if eval_energy(c, mid * xbar) < c.limit:
                lo = mid
            else:
                hi = mid
        alpha = min(alpha, lo)
    if not math.isfinite(alpha):
        raise InfeasibleScenario("infeasible scenario: a decision variable is unbounded")
    z0 = 0.5 * alpha * base
    slacks = A @ z0 + b
    ok = np.all(slacks > cfg.interior_eps * np.maximum(1.0, np.abs(b)))
    for c in s.energy_constraints:
        ok &= c.limit - eval_energy(c, S @ z0) > cfg.interior_eps * max(1.0, c.limit)
    if not ok or np.any(z0 <= cfg.interior_eps * 1e-3):
        raise InfeasibleScenario("infeasible scenario: no strictly interior point found")
    return z0


def _local(prob: EgProblem, z, n):
    bk = prob.blocks[n]
    K = prob.scenario.n_resources
    x = np.zeros(K)
    m = bk.xvars >= 0
    x[m] = z[bk.xvars[m]]
    return x, z[bk.tvars]


def _agent_utility(prob: EgProblem, z, n) -> float:
    x, t = _local(prob, z, n)
    return prob.blocks[n].utility.lifted(x, t)[0]


def _scatter_index(prob: EgProblem, n):
    bk = prob.blocks[n]
    K = prob.scenario.n_resources
    loc = np.concatenate([np.arange(K), K + np.arange(bk.tvars.size)])
    glob = np.concatenate([bk.xvars, bk.tvars])
    keep = glob >= 0
    return loc[keep], glob[keep]


def objective_terms(prob: EgProblem, z, need_hess=True):
    """Objective value, gradient and Hessian in z (to be maximised)."""
    nz = prob.n_vars
    f = 0.0
    g = np.zeros(nz)
    H = np.zeros((nz, nz)) if need_hess else None
    for n, bk in enumerate(prob.blocks):
        w = prob.weights[n]
        x, t = _local(prob, z, n)
        u, gl, hl = bk.utility.lifted(x, t)
        loc, glob = _scatter_index(prob, n)
        gl = gl[loc]
        if prob.objective == "log":
            if not u > 0:
                return -math.inf, g, H
            f += w * math.log(u)
            g[glob] += w * gl / u
            if need_hess:
                H[np.ix_(glob, glob)] += w * (hl[np.ix_(loc, loc)] / u - np.outer(gl, gl) / u**2)
        else:
            f += w * u
            g[glob] += w * gl
            if need_hess:
                H[np.ix_(glob, glob)] += w * hl[np.ix_(loc, loc)]
    return f, g, H


def energy_terms(prob: EgProblem, z):
    """Energy slacks with their z-gradients of e_i (one row per constraint)."""
    s = prob.scenario
    xbar = prob.S @ z
    slack = np.array([c.limit - eval_energy(c, xbar) for c in s.energy_constraints])
    grad = np.array([energy_gradient(c, xbar) @ prob.S for c in s.energy_constraints]).reshape(len(slack), prob.n_vars)
    return slack, grad, xbar


class _Barrier:
    def __init__(self, prob: EgProblem, mu: float):
        self.prob = prob
        self.mu = mu

    def feasible(self, z) -> bool:
        p = self.prob
        if np.any(p.A @ z + p.b <= 0):
            return False
        sl, _, _ = energy_terms(p, z)
        if np.any(sl <= 0):
            return False
        if p.objective == "log":
            return all(_agent_utility(p, z, n) > 0 for n in range(len(p.blocks)))
        return True

    def value(self, z) -> float:
        p = self.prob
        if not self.feasible(z):
            return math.inf
        f, _, _ = objective_terms(p, z, need_hess=False)
        ls = p.A @ z + p.b
        sl, _, _ = energy_terms(p, z)
        return -f - self.mu * (np.sum(np.log(ls)) + np.sum(np.log(sl)))

    def derivatives(self, z):
        p = self.prob
        mu = self.mu
        f, g, H = objective_terms(p, z)
        ls = p.A @ z + p.b
        ys = mu / ls
        grad = -g - p.A.T @ ys
        hess = -H + (p.A.T * (ys / ls)) @ p.A
        sl, eg, xbar = energy_terms(p, z)
        for i, c in enumerate(p.scenario.energy_constraints):
            y = mu / sl[i]
            grad += y * eg[i]
            hd = energy_hessian_diag(c, xbar)
            hess += (y / sl[i]) * np.outer(eg[i], eg[i]) + y * (p.S.T * hd) @ p.S
        return grad, hess


def _newton_direction(hess, grad):
    scale = max(np.max(np.abs(np.diag(hess))), 1e-300)
    delta = 0.0
    for _ in range(12):
        try:
            c = scipy.linalg.cho_factor(hess + delta * np.eye(hess.shape[0]), check_finite=True)
            return -scipy.linalg.cho_solve(c, grad)
        except (np.linalg.LinAlgError, ValueError):
            delta = 1e-14 * scale if delta == 0 else delta * 100
    raise NumericalFailure("numerical failure: Newton system singular beyond regularization")


def _center(bar: _Barrier, z, cfg: SolverConfig, wsum: float):
    """Newton's method on the barrier subproblem from a strictly feasible z."""
    steps = 0
    for steps in range(1, cfg.max_newton + 1):
        grad, hess = bar.derivatives(z)
        d = _newton_direction(hess, grad)
        dec = -grad @ d
        if not np.isfinite(dec):
            raise NumericalFailure("numerical failure: non-finite Newton decrement")
        if dec <= 1e-26 * wsum:
            break
        step = 1.0
        while not bar.feasible(z + step * d):
            step *= 0.5
            if step < 1e-20:
                raise NumericalFailure("numerical failure: cannot stay interior")
        if dec > 1e-8 * wsum:
            f0 = bar.value(z)
            while bar.value(z + step * d) > f0 - 0.01 * step * dec:
                step *= 0.5
                if step < 1e-20:
                    break
            if step < 1e-20:
                break
        z = z + step * d
        if step == 1.0 and dec <= 1e-22 * wsum:
            break
    return z, steps


@dataclass
class _Duals:
    gamma: np.ndarray
    lam: np.ndarray
    eta: np.ndarray  # one per epigraph row, in row order

    def scaled(self, c):
        return _Duals(self.gamma * c, self.lam * c, self.eta * c)


def _barrier_duals(prob: EgProblem, z, mu) -> _Duals:
    s = prob.scenario
    ls = prob.A @ z + prob.b
    gamma = np.zeros(s.n_resources)
    for i in prob.rows("cap"):
        gamma[prob.row_ref[i][0]] = mu / ls[i]
    sl, _, _ = energy_terms(prob, z)
    lam = mu / sl if sl.size else np.zeros(0)
    eta = mu / ls[prob.rows("epi")]
    return _Duals(gamma, lam, eta)


def _lagrangian_gradient(prob: EgProblem, z, du: _Duals) -> np.ndarray:
    """Gradient of objective minus dual-weighted constraint gradients (nu excluded)."""
    _, g, _ = objective_terms(prob, z, need_hess=False)
    r = g.copy()
    cap = prob.rows("cap")
    for i in cap:
        r += du.gamma[prob.row_ref[i][0]] * prob.A[i]
    _, eg, _ = energy_terms(prob, z)
    if eg.size:
        r -= du.lam @ eg
    epi = prob.rows("epi")
    if epi.size:
        r += du.eta @ prob.A[epi]
    return r


def kkt_residuals(prob: EgProblem, z, du: _Duals, threshold: float) -> dict:
    """Scaled KKT residuals of the lifted program at z for the given duals.

    Non-negativity multipliers are fitted: zero on active coordinates, and
    the best non-negative value on coordinates below ``threshold``.
    """
    scale = prob.scenario.scale()
    r = _lagrangian_gradient(prob, z, du)
    inactive = z <= threshold
    nu = np.where(inactive, np.maximum(-r, 0.0), 0.0)
    stat = np.abs(r + nu)
    ls = prob.A @ z + prob.b
    comp = [0.0]
    cap = prob.rows("cap")
    comp.extend(du.gamma[prob.row_ref[i][0]] * ls[i] for i in cap)
    sl, _, _ = energy_terms(prob, z)
    comp.extend(du.lam * sl)
    comp.extend(du.eta * ls[prob.rows("epi")])
    comp.extend(nu * z)
    feas = max(0.0, -float(np.min(ls, initial=0.0)), -float(np.min(sl, initial=0.0)))
    dual_feas = -min(0.0, float(np.min(du.gamma, initial=0.0)), float(np.min(du.lam, initial=0.0)),
                     float(np.min(du.eta, initial=0.0)))
    return {
        "stationarity": float(np.max(stat, initial=0.0)) / scale,
        "complementarity": float(np.max(np.abs(comp))) / scale,
        "primal_feasibility": feas / scale,
        "dual_feasibility": dual_feas / scale,
    }


def _refine_duals(prob: EgProblem, z, du: _Duals, mu: float, threshold: float) -> _Duals:
    """Non-negative least-squares fit of all multipliers to stationarity at z."""
    _, g, _ = objective_terms(prob, z, need_hess=False)
    ls = prob.A @ z + prob.b
    sl, eg, _ = energy_terms(prob, z)
    cols, tags = [], []
    for i in prob.rows("cap"):
        k = prob.row_ref[i][0]
        if du.gamma[k] >= ls[i]:
            cols.append(-prob.A[i])
            tags.append(("cap", k))
    for i in range(sl.size):
        if du.lam[i] >= sl[i]:
            cols.append(eg[i])
            tags.append(("energy", i))
    epi = prob.rows("epi")
    for j, i in enumerate(epi):
        if du.eta[j] >= ls[i]:
            cols.append(-prob.A[i])
            tags.append(("epi", j))
    for j in np.flatnonzero(z <= threshold):
        e = np.zeros(prob.n_vars)
        e[j] = -1.0
        cols.append(e)
        tags.append(("nu", j))
    if not cols:
        return du
    M = np.array(cols).T
    y, _ = nnls(M, g, maxiter=50 * M.shape[1])
    out = _Duals(np.zeros_like(du.gamma), np.zeros_like(du.lam), np.zeros_like(du.eta))
    for val, (kind, idx) in zip(y, tags):
        if kind == "cap":
            out.gamma[idx] = val
        elif kind == "energy":
            out.lam[idx] = val
        elif kind == "epi":
            out.eta[idx] = val
    return out


def _worst(res: dict) -> float:
    return max(res.values())


def _trim_leontief(u, x: np.ndarray, free: np.ndarray) -> None:
    """Cut quantities used only by Leontief leaves down to what the bundles need.

    Leaves utility unchanged; free resources (never variables) get their
    bundle quantity here as well.
    """
    leaves = list(u.leaves())
    smooth = set()
    for lf in leaves:
        if not isinstance(lf, Leontief):
            smooth |= lf.resources()
    values = [min(x[k] / d for k, d in lf.weights if not free[k]) if isinstance(lf, Leontief) else None
              for lf in leaves]
    need: dict[int, float] = {}
    for lf, v in zip(leaves, values):
        if isinstance(lf, Leontief):
            for k, d in lf.weights:
                need[k] = max(need.get(k, 0.0), d * v)
    for k, q in need.items():
        if k not in smooth:
            x[k] = q


def _extract(prob: EgProblem, z, du: _Duals, stats: dict) -> EquilibriumResult:
    s = prob.scenario
    N, K = s.n_agents, s.n_resources
    X = np.zeros((N, K))
    for n, bk in enumerate(prob.blocks):
        m = bk.xvars >= 0
        X[n, m] = np.maximum(z[bk.xvars[m]], 0.0)
        _trim_leontief(bk.utility, X[n], prob.free)
    gamma = np.maximum(du.gamma, 0.0)
    lam = np.maximum(du.lam, 0.0)
    dec = assemble_prices(s, X, gamma, lam)
    utilities = np.array([a.utility.value(X[n]) for n, a in enumerate(s.agents)])
    with np.errstate(divide="ignore"):
        obj = float(np.sum(s.budgets * np.log(utilities)))
    return EquilibriumResult(X, dec.prices, gamma, lam, utilities, obj, dec, stats)


def solve(prob: EgProblem, cfg: SolverConfig | None = None) -> EquilibriumResult:
    """Follow the central path until the scaled KKT residuals reach the tolerance."""
    cfg = cfg or SolverConfig()
    wsum = float(np.sum(prob.weights))
    mu = cfg.mu0 * wsum
    z = prob.z0.copy()
    history: list[float] = []
    newton_total = 0
    best = None
    for outer in range(1, cfg.max_outer + 1):
        bar = _Barrier(prob, mu)
        z, steps = _center(bar, z, cfg, wsum)
        newton_total += steps
        history.append(objective_terms(prob, z, need_hess=False)[0])
        du = _barrier_duals(prob, z, mu)
        res = kkt_residuals(prob, z, du, cfg.activity_threshold)
        refined = _refine_duals(prob, z, du, mu, cfg.activity_threshold)
        res_ref = kkt_residuals(prob, z, refined, cfg.activity_threshold)
        use_refined = _worst(res_ref) < _worst(res)
        if use_refined:
            du, res = refined, res_ref
        stats = {
            "outer_iterations": outer,
            "newton_steps": newton_total,
            "mu": mu,
            "objective_history": list(history),
            "residuals": res,
            "refined_duals": use_refined,
            "objective_kind": prob.objective,
        }
        best = (z, du, stats)
        logger.debug("outer %d mu=%.3e residuals=%s", outer, mu, res)
        if _worst(res) <= 1e-2 * cfg.kkt_tolerance and mu <= cfg.mu_final * wsum:
            return _extract(prob, z, du, stats)
        if mu < 1e-15 * wsum:
            break
        mu *= cfg.mu_factor
    z, du, stats = best
    result = _extract(prob, z, du, stats)
    if _worst(stats["residuals"]) <= cfg.kkt_tolerance:
        return result
    raise MaxIterations(f"max iterations: residuals {stats['residuals']}", result)


def solve_market(s: MarketScenario, cfg: SolverConfig | None = None) -> EquilibriumResult:
    """Build and solve the equilibrium program for ``s``."""
    cfg = cfg or SolverConfig()
    return solve(build_problem(s, "log", cfg=cfg), cfg)
