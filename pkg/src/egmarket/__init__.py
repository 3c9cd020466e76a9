"""Fisher-market equilibrium with energy externalities.

Solve the convex program with :func:`solve_market`, certify the result with
:func:`certify`, and compare against :func:`solve_social_optimum`.
"""

from egmarket.best_response import BestResponse, best_response, indirect_utility
from egmarket.model import (
    UNBOUNDED, Agent, EnergyConstraint, MarketScenario, Resource, ResourceId, ScenarioError,
    make_scenario, validate_scenario,
)
from egmarket.pricing import PriceDecomposition, assemble_prices, check_clearing
from egmarket.social import SocialOptimumResult, solve_social_optimum
from egmarket.solver import EquilibriumResult, SolverConfig, SolverError, solve_market
from egmarket.utility import CES, CobbDouglas, Leontief, Linear, Nest, utility_sum
from egmarket.verification import CertificateReport, certify, nash_welfare

__version__ = "0.1.0"

__all__ = [
    "UNBOUNDED", "Agent", "BestResponse", "CES", "CertificateReport", "CobbDouglas", "EnergyConstraint",
    "EquilibriumResult", "Leontief", "Linear", "MarketScenario", "Nest", "PriceDecomposition", "Resource",
    "ResourceId", "ScenarioError", "SocialOptimumResult", "SolverConfig", "SolverError", "assemble_prices",
    "best_response", "certify", "check_clearing", "indirect_utility", "make_scenario", "nash_welfare",
    "solve_market", "solve_social_optimum", "utility_sum", "validate_scenario",
]
