"""
Acceptance rules run by the `verify` subcommand.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from geometry.constraints import ConstraintSet
from geometry.natural import NaturalConstraints
from simulation.paths import block_generator
from simulation.wealth import UtilityEstimate, VerificationReport
from solver.curves import SolutionCurves, verify_bellman_ode
from solver.objective import GObjective
from solver.optimizer import PortfolioSolution
from solver.qmeasure import QMeasureReport
from utils.errors import DomainError

logger = logging.getLogger(__name__)


def feasible_samples(C: ConstraintSet, natural: NaturalConstraints, count: int, seed: int = 0,
                     radius: float = 1.0, margin: float = 1e-3) -> List[np.ndarray]:
    """Deterministic points of C ∩ C0 with slack `margin` on every C0 row."""
    rng = block_generator(seed, 2 ** 33)
    points: List[np.ndarray] = []
    for _ in range(200 * count):
        y = rng.uniform(-radius, radius, C.dim)
        if not C.contains(y):
            continue
        if not natural.is_everything and np.any(natural.slack(y) < margin * np.maximum(natural.r, 1.0)):
            continue
        points.append(y)
        if len(points) == count:
            break
    return points


class AcceptanceChecker:
    """Checks a solved problem against its optimality and Monte Carlo criteria."""

    def __init__(self, config: Optional[Dict] = None):
        """
        Initialize the checker.

        Args:
            config: The `acceptance` section of the settings file
        """
        config = config or {}
        self.config = config
        self.n_sigma = float(config.get('n_sigma', 3.0))
        self.dominance_sigma = float(config.get('dominance_sigma', 2.0))
        self.first_order_tol = float(config.get('first_order_tol', 1e-6))
        self.gradient_rel_tol = float(config.get('gradient_rel_tol', 1e-5))
        self.concavity_slack = float(config.get('concavity_slack', 1e-9))
        self.ode_tol = float(config.get('ode_tol', 1e-8))
        self.residual_tol = float(config.get('residual_tol', 1e-7))
        self.samples = int(config.get('samples', 100))
        self.concavity_samples = int(config.get('concavity_samples', 1000))
        self.seed = int(config.get('seed', 0))

        logger.debug(f"Acceptance checker: n_sigma={self.n_sigma}, samples={self.samples}, "
                     f"concavity_samples={self.concavity_samples}")

    def _radius(self, solution: PortfolioSolution) -> float:
        if solution.pi_hat is None:
            return 1.0
        return max(1.0, 2.0 * float(np.linalg.norm(solution.pi_hat)))

    def check_first_order(self, solution: PortfolioSolution, objective: GObjective, C: ConstraintSet,
                          natural: NaturalConstraints) -> Tuple[bool, str]:
        """G(ỹ, π̂) <= tol for sampled ỹ in C ∩ C0 (convex C)."""
        if solution.pi_hat is None:
            return False, f"no maximizer (verdict {solution.verdict})"
        if not C.is_convex:
            return True, "first-order condition not applicable to a non-convex set"
        worst = -math.inf
        for y in feasible_samples(C, natural, self.samples, self.seed, self._radius(solution)):
            worst = max(worst, objective.directional(y, solution.pi_hat))
        if worst > self.first_order_tol:
            return False, f"max G(y, pi_hat) = {worst:.3e} exceeds {self.first_order_tol:.1e}"
        return True, f"max G(y, pi_hat) = {worst:.3e}"

    def check_gradient(self, objective: GObjective, C: ConstraintSet, natural: NaturalConstraints,
                       radius: float = 1.0, step: float = 1e-5) -> Tuple[bool, str]:
        """Directional derivative G against central differences of g."""
        points = feasible_samples(C, natural, 2 * self.samples, self.seed + 1, radius, margin=1e-2)
        worst = 0.0
        for y, target in zip(points[::2], points[1::2]):
            direction = target - y
            try:
                forward = objective.value(y + step * direction).value
                backward = objective.value(y - step * direction).value
            except DomainError:
                continue
            numeric = (forward - backward) / (2.0 * step)
            analytic = objective.directional(target, y)
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), 1e-3))
        if worst > self.gradient_rel_tol:
            return False, f"relative gradient error {worst:.3e} exceeds {self.gradient_rel_tol:.1e}"
        return True, f"relative gradient error {worst:.3e}"

    def check_concavity(self, objective: GObjective, C: ConstraintSet, natural: NaturalConstraints,
                        radius: float = 1.0) -> Tuple[bool, str]:
        points = feasible_samples(C, natural, 2 * self.concavity_samples, self.seed + 2, radius)
        for y, z in zip(points[::2], points[1::2]):
            mid = objective.value(0.5 * (y + z)).value
            ends = 0.5 * (objective.value(y).value + objective.value(z).value)
            if mid < ends - self.concavity_slack * (1.0 + abs(ends)):
                return False, f"midpoint test fails between {y.tolist()} and {z.tolist()}"
        return True, f"{len(points) // 2} midpoint tests passed"

    def check_bellman(self, curves: SolutionCurves) -> Tuple[bool, str]:
        residual = verify_bellman_ode(curves)
        if residual >= self.ode_tol:
            return False, f"Bellman ODE residual {residual:.3e} exceeds {self.ode_tol:.1e}"
        return True, f"Bellman ODE residual {residual:.3e}"

    def check_utility(self, estimate: UtilityEstimate, curves: SolutionCurves) -> Tuple[bool, str]:
        """Monte Carlo expected utility at π̂ against u(x0) = ℓ_0·x0^p/p."""
        target = curves.u_x0
        gap = abs(estimate.mean - target)
        if not gap <= self.n_sigma * estimate.se + 1e-12 * max(1.0, abs(target)):
            return False, f"E[U] = {estimate.mean:.8g} vs u(x0) = {target:.8g} (SE {estimate.se:.3g})"
        return True, f"E[U] = {estimate.mean:.8g} vs u(x0) = {target:.8g} (SE {estimate.se:.3g})"

    def check_dominance(self, at_optimum: UtilityEstimate,
                        perturbed: Sequence[UtilityEstimate]) -> Tuple[bool, str]:
        """No perturbed portfolio beats π̂ by more than dominance_sigma standard errors."""
        for k, estimate in enumerate(perturbed):
            bound = at_optimum.mean + self.dominance_sigma * max(estimate.se, at_optimum.se)
            if estimate.mean > bound:
                return False, f"perturbation {k} reaches {estimate.mean:.8g} above {bound:.8g}"
        return True, f"{len(perturbed)} perturbations dominated"

    def check_verification(self, report: VerificationReport) -> Tuple[bool, str]:
        failed = [check['name'] for check in report.checks if not check['passed']]
        if not report.checks:
            return False, "no verification checks were run"
        if failed:
            return False, f"failed: {', '.join(failed)}"
        return True, ", ".join(check['name'] for check in report.checks) + " within bounds"

    def check_q_measure(self, report: QMeasureReport) -> Tuple[bool, str]:
        if not report.exists:
            return True, f"Q does not exist (G(0, pi_hat) = {report.drift_residual:.3e})"
        if report.residuals is None:
            return False, "martingale residuals unavailable"
        worst = float(np.max(np.abs(report.residuals)))
        if worst > self.residual_tol:
            return False, f"martingale residual {worst:.3e} exceeds {self.residual_tol:.1e}"
        return True, f"martingale residual {worst:.3e}"

    def check_density_mass(self, density: np.ndarray) -> Tuple[bool, str]:
        """E[Z_T] = 1 within n_sigma standard errors."""
        n = density.shape[0]
        mean = float(np.mean(density))
        se = float(np.std(density, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        if abs(mean - 1.0) > self.n_sigma * se + 1e-12:
            return False, f"E[Z_T] = {mean:.6g} (SE {se:.3g})"
        return True, f"E[Z_T] = {mean:.6g} (SE {se:.3g})"

    @staticmethod
    def record(name: str, outcome: Tuple[bool, str]) -> Dict:
        passed, reason = outcome
        level = logging.INFO if passed else logging.WARNING
        logger.log(level, f"[{'PASS' if passed else 'FAIL'}] {name}: {reason}")
        return {'name': name, 'passed': bool(passed), 'reason': reason}
