"""
Entry point tying geometry, optimizer and curves together for one problem.
"""
import logging
from typing import Optional

from geometry.arbitrage import ConstraintGeometry, analyze_geometry
from market.levy import LevyTriplet
from market.problem import ProblemSpec
from solver.nonconvex import maximize_nonconvex
from solver.optimizer import OptimizerSettings, PortfolioSolution, maximize_convex

logger = logging.getLogger(__name__)


def solve_portfolio(
    triplet: LevyTriplet,
    problem: ProblemSpec,
    settings: Optional[OptimizerSettings] = None,
    geometry: Optional[ConstraintGeometry] = None,
    strict: bool = False,
) -> PortfolioSolution:
    """
    Solve the reduced problem max g over C ∩ C0 for `problem`.

    Convex constraint sets go to maximize_convex, everything else to
    maximize_nonconvex.
    """
    C = problem.constraints
    if C.dim != triplet.dim:
        raise ValueError(f"constraint dimension {C.dim} does not match model dimension {triplet.dim}")
    geometry = geometry or analyze_geometry(triplet, C, problem.tolerances.kernel)
    if C.is_convex:
        return maximize_convex(triplet, C, problem.p, problem.tolerances, settings, geometry, strict)
    logger.info(f"Constraint set {C.kind} is not convex; using the non-convex search")
    return maximize_nonconvex(triplet, C, problem.p, problem.tolerances, settings, geometry, strict)
