"""Equilibrium prices as capacity prices plus Pigouvian energy taxes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egmarket.model import MarketScenario, aggregate_usage, energy_gradient, eval_energy


@dataclass(frozen=True)
class PriceDecomposition:
    """Per-resource price split.

    ``taxes[i, k]`` is the tax charged on resource k for energy constraint i,
    i.e. the constraint's dual times the marginal energy of k.
    """

    prices: np.ndarray
    capacity: np.ndarray
    taxes: np.ndarray
    spending: np.ndarray

    @property
    def total_tax(self) -> np.ndarray:
        return self.taxes.sum(axis=0)


def assemble_prices(s: MarketScenario, x, gamma, lam) -> PriceDecomposition:
    x = np.asarray(x, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if gamma.shape != (s.n_resources,) or lam.shape != (len(s.energy_constraints),):
        raise ValueError("dual dimensions do not match the scenario")
    if np.any(gamma < 0) or np.any(lam < 0):
        raise ValueError("duals must be non-negative")
    xbar = aggregate_usage(x)
    taxes = np.zeros((len(s.energy_constraints), s.n_resources))
    for i, c in enumerate(s.energy_constraints):
        taxes[i] = lam[i] * energy_gradient(c, xbar)
    prices = gamma + taxes.sum(axis=0)
    return PriceDecomposition(prices, gamma.copy(), taxes, x @ prices)


@dataclass
class ConstraintCheck:
    kind: str
    name: str
    slack: float
    dual: float
    product: float
    passed: bool


@dataclass
class ClearingReport:
    checks: list[ConstraintCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_product(self) -> float:
        return max((abs(c.product) for c in self.checks), default=0.0)

    @property
    def max_violation(self) -> float:
        return max((max(-c.slack, 0.0) for c in self.checks), default=0.0)

    def failures(self) -> list[ConstraintCheck]:
        return [c for c in self.checks if not c.passed]


def check_clearing(s: MarketScenario, x, d: PriceDecomposition | None, gamma, lam, tol: float) -> ClearingReport:
    """Feasibility and complementary slackness for capacity and energy rows.

    A constraint passes when it is feasible within ``tol`` and the product of
    its dual with its slack is at most ``tol``. Unbounded resources must carry
    a zero capacity price.
    """
    x = np.asarray(x, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    lam = np.asarray(lam, dtype=float)
    xbar = aggregate_usage(x)
    rep = ClearingReport()
    for k, r in enumerate(s.resources):
        g = float(gamma[k])
        if r.bounded:
            slack = r.capacity - xbar[k]
            prod = g * slack
            ok = slack >= -tol and abs(prod) <= tol and g >= -tol
        else:
            slack, prod = np.inf, 0.0
            ok = abs(g) <= tol
        rep.checks.append(ConstraintCheck("capacity", r.name, float(slack), g, float(prod), bool(ok)))
    for i, c in enumerate(s.energy_constraints):
        slack = c.limit - eval_energy(c, xbar)
        prod = float(lam[i]) * slack
        ok = slack >= -tol and abs(prod) <= tol and lam[i] >= -tol
        rep.checks.append(ConstraintCheck("energy", c.label, float(slack), float(lam[i]), float(prod), bool(ok)))
    if d is not None:
        ident = np.max(np.abs(d.prices - d.capacity - d.total_tax), initial=0.0)
        rep.checks.append(ConstraintCheck("decomposition", "p = gamma + sum tax", 0.0, 0.0, float(ident), bool(ident <= tol)))
    return rep
