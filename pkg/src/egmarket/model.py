"""Market scenarios: resources, agents, energy constraints and validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from egmarket.utility import CES, CobbDouglas, Leontief, Linear, Nest, UtilitySpec, validate_utility

UNBOUNDED = math.inf


@dataclass(frozen=True)
class ResourceId:
    index: int
    name: str


@dataclass(frozen=True)
class Resource:
    id: ResourceId
    capacity: float = UNBOUNDED

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.capacity)

    @property
    def name(self) -> str:
        return self.id.name


@dataclass(frozen=True)
class Agent:
    name: str
    budget: float
    utility: UtilitySpec


@dataclass(frozen=True)
class EnergyConstraint:
    """sum_{k in scope} xbar_k ** beta_k <= limit."""

    id: int
    exponents: tuple[tuple[int, float], ...]
    limit: float
    name: str = ""

    def __post_init__(self):
        items = self.exponents.items() if isinstance(self.exponents, Mapping) else self.exponents
        object.__setattr__(self, "exponents", tuple(sorted((int(k), float(b)) for k, b in items)))
        object.__setattr__(self, "limit", float(self.limit))

    @property
    def scope(self) -> frozenset[int]:
        return frozenset(k for k, _ in self.exponents)

    @property
    def index(self) -> np.ndarray:
        return np.array([k for k, _ in self.exponents], dtype=int)

    @property
    def beta(self) -> np.ndarray:
        return np.array([b for _, b in self.exponents], dtype=float)

    @property
    def label(self) -> str:
        return self.name or f"e{self.id}"


@dataclass(frozen=True)
class MarketScenario:
    agents: tuple[Agent, ...]
    resources: tuple[Resource, ...]
    energy_constraints: tuple[EnergyConstraint, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "resources", tuple(self.resources))
        object.__setattr__(self, "energy_constraints", tuple(self.energy_constraints))

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_resources(self) -> int:
        return len(self.resources)

    @property
    def budgets(self) -> np.ndarray:
        return np.array([a.budget for a in self.agents], dtype=float)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([r.capacity for r in self.resources], dtype=float)

    @property
    def resource_names(self) -> list[str]:
        return [r.name for r in self.resources]

    def resource_index(self, name: str) -> int:
        for r in self.resources:
            if r.name == name:
                return r.id.index
        raise KeyError(f"unknown resource {name!r}")

    def covered(self) -> np.ndarray:
        """Mask of resources limited by a capacity or by some energy constraint."""
        mask = np.isfinite(self.capacities)
        for c in self.energy_constraints:
            mask[[k for k in c.scope if 0 <= k < mask.size]] = True
        return mask

    def scale(self) -> float:
        """Unit scale max(1, |B|, |E|, |C|) used to normalise residuals."""
        caps = self.capacities
        vals = [1.0, float(np.max(self.budgets))]
        vals.extend(c.limit for c in self.energy_constraints)
        if np.any(np.isfinite(caps)):
            vals.append(float(np.max(caps[np.isfinite(caps)])))
        return max(vals)

    def with_budgets(self, budgets: Sequence[float]) -> "MarketScenario":
        agents = tuple(Agent(a.name, float(b), a.utility) for a, b in zip(self.agents, budgets))
        return MarketScenario(agents, self.resources, self.energy_constraints)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __iter__(self):
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)


class ScenarioError(ValueError):
    pass


def aggregate_usage(x) -> np.ndarray:
    return np.asarray(x, dtype=float).sum(axis=0)


def eval_energy(c: EnergyConstraint, xbar) -> float:
    xbar = np.asarray(xbar, dtype=float)
    return float(np.sum(xbar[c.index] ** c.beta))


def energy_gradient(c: EnergyConstraint, xbar) -> np.ndarray:
    xbar = np.asarray(xbar, dtype=float)
    g = np.zeros(xbar.size)
    for k, b in c.exponents:
        g[k] = 1.0 if b == 1.0 else b * xbar[k] ** (b - 1.0)
    return g


def energy_hessian_diag(c: EnergyConstraint, xbar) -> np.ndarray:
    """Diagonal of the Hessian; unbounded at 0 when 1 < beta < 2, so stay interior.

    Resources with zero usage (nobody can use them) contribute nothing.
    """
    xbar = np.asarray(xbar, dtype=float)
    h = np.zeros(xbar.size)
    for k, b in c.exponents:
        if b != 1.0 and xbar[k] > 0:
            h[k] = b * (b - 1.0) * xbar[k] ** (b - 2.0)
    return h


def _leaf_unbounded(leaf, covered: np.ndarray) -> bool:
    idx = [k for k, _ in leaf.weights if 0 <= k < covered.size]
    if not idx:
        return False
    if isinstance(leaf, Leontief):
        return not any(covered[k] for k in idx)
    # Linear, CES and Cobb-Douglas grow without bound along any free resource
    return not all(covered[k] for k in idx)


def validate_scenario(s: MarketScenario) -> ValidationReport:
    """Collect every structural violation of ``s`` with a readable path."""
    rep = ValidationReport()
    v = rep.violations
    K = len(s.resources)
    if not s.agents:
        v.append("agents: at least one agent required")
    if not s.resources:
        v.append("resources: at least one resource required")
    names = [r.name for r in s.resources]
    for i, r in enumerate(s.resources):
        if r.id.index != i:
            v.append(f"resources[{i}]: index {r.id.index} breaks dense numbering")
        if names.count(r.name) > 1 and names.index(r.name) == i:
            v.append(f"resources[{i}]: duplicate name {r.name!r}")
        if not (r.capacity > 0):
            v.append(f"resources[{i}] ({r.name}): capacity > 0 required, got {r.capacity}")
    for j, c in enumerate(s.energy_constraints):
        p = f"energy_constraints[{j}]"
        if not c.exponents:
            v.append(f"{p}: scope must be non-empty")
        for k, b in c.exponents:
            if not 0 <= k < K:
                v.append(f"{p}: unknown resource {k}")
            if not (b >= 1.0 and math.isfinite(b)):
                v.append(f"{p}: exponent for resource {k} must be >= 1, got {b}")
        if not (c.limit > 0 and math.isfinite(c.limit)):
            v.append(f"{p}: limit > 0 required, got {c.limit}")
    covered = s.covered() if K else np.zeros(0, dtype=bool)
    for n, a in enumerate(s.agents):
        p = f"agents[{n}] ({a.name})"
        if not (a.budget > 0 and math.isfinite(a.budget)):
            v.append(f"{p}: budget > 0 required, got {a.budget}")
        problems = validate_utility(a.utility, K, f"{p}.utility")
        v.extend(problems)
        if problems:
            continue
        for leaf in a.utility.leaves():
            if _leaf_unbounded(leaf, covered):
                free = [names[k] for k, _ in leaf.weights if not covered[k]]
                v.append(f"{p}.utility: unbounded, resources {free} have neither capacity nor energy limit")
    return rep


def require_valid(s: MarketScenario) -> None:
    rep = validate_scenario(s)
    if not rep.ok:
        raise ScenarioError("invalid scenario:\n  " + "\n  ".join(rep.violations))


def make_scenario(
    resources: Sequence[tuple[str, float]],
    agents: Sequence[tuple[str, float, UtilitySpec]],
    energy: Sequence[tuple[Mapping[int, float], float]] = (),
) -> MarketScenario:
    """Compact constructor used by tests and bundled examples."""
    res = tuple(Resource(ResourceId(i, n), float(c)) for i, (n, c) in enumerate(resources))
    ags = tuple(Agent(n, float(b), u) for n, b, u in agents)
    ecs = tuple(EnergyConstraint(i, dict(e), lim) for i, (e, lim) in enumerate(energy))
    return MarketScenario(ags, res, ecs)


__all__ = [
    "UNBOUNDED", "ResourceId", "Resource", "Agent", "EnergyConstraint", "MarketScenario",
    "ValidationReport", "ScenarioError", "aggregate_usage", "eval_energy", "energy_gradient",
    "energy_hessian_diag", "validate_scenario", "require_valid", "make_scenario",
    "Linear", "Leontief", "CobbDouglas", "CES", "Nest",
]
