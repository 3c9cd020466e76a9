"""Social-optimum baseline: maximise a weighted sum of utilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egmarket.model import MarketScenario
from egmarket.solver import SolverConfig, build_problem, solve


@dataclass
class SocialOptimumResult:
    allocation: np.ndarray
    utilities: np.ndarray
    objective: float
    weights: np.ndarray
    capacity_duals: np.ndarray
    energy_duals: np.ndarray
    solver_stats: dict = field(default_factory=dict)


def solve_social_optimum(s: MarketScenario, weights=None, cfg: SolverConfig | None = None) -> SocialOptimumResult:
    """Weighted-sum optimum under the same capacity and energy rows.

    Weights default to the agents' budgets. A zero weight is allowed; that
    agent only receives what nobody with positive weight can use.
    """
    cfg = cfg or SolverConfig()
    w = s.budgets if weights is None else np.asarray(weights, dtype=float)
    r = solve(build_problem(s, "linear", w, cfg), cfg)
    return SocialOptimumResult(
        allocation=r.allocation,
        utilities=r.utilities,
        objective=float(w @ r.utilities),
        weights=w,
        capacity_duals=r.capacity_duals,
        energy_duals=r.energy_duals,
        solver_stats=r.solver_stats,
    )
