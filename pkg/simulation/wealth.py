"""
Wealth processes, expected utility and Monte Carlo verification.

For a constant portfolio π the wealth X = x0·ℰ(π·R - δ∫κ̂ ds) is computed
exactly between grid points: the continuous part through its Itô-corrected
exponential, each jump multiplying wealth by (1 + π·x). A jump with
1 + π·x <= 0 absorbs the path at zero.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.integrate import trapezoid

from geometry.constraints import ConstraintSet
from geometry.natural import NaturalConstraints
from market.levy import LevyTriplet
from market.problem import ProblemSpec
from simulation.paths import PathBatch, block_generator
from solver.curves import SolutionCurves
from solver.optimizer import PortfolioSolution

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WealthPaths:
    """Wealth on the batch grid; absorbed marks paths that hit zero."""

    grid: np.ndarray
    values: np.ndarray
    absorbed: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


@dataclass
class UtilityEstimate:
    """Sample mean of realized utility with its standard error."""

    mean: float
    se: float
    n_paths: int
    absorbed: int = 0

    def to_dict(self) -> Dict:
        return {'mean': self.mean, 'se': self.se, 'n_paths': self.n_paths, 'absorbed': self.absorbed}


@dataclass
class VerificationReport:
    """Statistical checks |estimate - target| <= n_sigma·SE."""

    checks: List[Dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check['passed'] for check in self.checks)

    def add(self, name: str, estimate: float, target: float, se: float, n_sigma: float) -> None:
        gap = abs(estimate - target)
        passed = bool(gap <= n_sigma * se or gap <= 1e-12 * max(1.0, abs(target)))
        self.checks.append({'name': name, 'estimate': float(estimate), 'target': float(target),
                            'se': float(se), 'n_sigma': n_sigma, 'passed': passed})
        logger.info(f"{name}: estimate {estimate:.8g} vs {target:.8g} (SE {se:.3g}) -> {'PASS' if passed else 'FAIL'}")

    def to_dict(self) -> Dict:
        return {'passed': self.passed, 'checks': list(self.checks)}


def _mean_se(samples: np.ndarray):
    n = samples.shape[0]
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _jump_log_factors(batch: PathBatch, factor: Callable[[np.ndarray], np.ndarray]):
    """Per grid point cumulative sum of log factor(jump) and the index where a factor <= 0 first occurs."""
    n, size = batch.n_paths, batch.grid.size
    cumulative = np.zeros((n, size))
    absorb = np.full(n, size, dtype=int)
    if batch.jump_time.size == 0:
        return cumulative, absorb
    values = factor(batch.jump_mark)
    index = batch.jump_grid_index()
    dead = values <= 0
    if dead.any():
        np.minimum.at(absorb, batch.jump_path[dead], index[dead])
    logs = np.where(dead, 0.0, np.log(np.where(dead, 1.0, values)))
    bumps = np.zeros((n, size + 1))
    np.add.at(bumps, (batch.jump_path, index), logs)
    cumulative = np.cumsum(bumps, axis=1)[:, :-1]
    return cumulative, absorb


def wealth_paths(batch: PathBatch, pi, curves: Optional[SolutionCurves] = None, x0: float = 1.0) -> WealthPaths:
    """
    Wealth of the constant portfolio pi with consumption κ̂ from `curves`
    (no consumption when curves is None or has delta = 0).
    """
    pi = np.asarray(pi, dtype=float)
    grid = batch.grid
    rate = float(pi @ batch.drift) - 0.5 * float(pi @ batch.c @ pi)
    log_wealth = math.log(x0) + rate * grid[None, :] + batch.continuous_part() @ pi
    jumps, absorb = _jump_log_factors(batch, lambda marks: 1.0 + marks @ pi)
    log_wealth = log_wealth + jumps
    if curves is not None and curves.has_consumption:
        log_wealth = log_wealth - curves.consumed(grid)[None, :]
    values = np.exp(log_wealth)
    values[np.arange(grid.size)[None, :] >= absorb[:, None]] = 0.0
    absorbed = absorb < grid.size
    if absorbed.any():
        logger.warning(f"{int(absorbed.sum())} of {batch.n_paths} paths absorbed at zero wealth")
    return WealthPaths(grid=grid, values=values, absorbed=absorbed)


def _utility(x: np.ndarray, p: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(x > 0, np.power(np.maximum(x, 1e-300), p) / p, -np.inf if p < 0 else 0.0)


def expected_utility(batch: PathBatch, pi, curves: Optional[SolutionCurves], problem: ProblemSpec) -> UtilityEstimate:
    """
    Estimate E[δ∫U(κ̂_t X_t)dt + U(X_T)] (trapezoid rule on the grid).

    For p < 0 a single absorbed path makes the estimate -inf.
    """
    wealth = wealth_paths(batch, pi, curves if problem.delta == 1 else None, problem.x0)
    p = problem.p
    n_absorbed = int(wealth.absorbed.sum())
    if p < 0 and n_absorbed:
        return UtilityEstimate(mean=-math.inf, se=math.nan, n_paths=batch.n_paths, absorbed=n_absorbed)
    samples = _utility(wealth.terminal, p)
    if problem.delta == 1:
        if curves is None:
            raise ValueError("consumption problems need solution curves for kappa")
        consumption = curves.kappa(wealth.grid)[None, :] * wealth.values
        samples = samples + trapezoid(_utility(consumption, p), wealth.grid, axis=1)
    mean, se = _mean_se(samples)
    return UtilityEstimate(mean=mean, se=se, n_paths=batch.n_paths, absorbed=n_absorbed)


def jump_compensator(triplet: LevyTriplet, factor: Callable[[float], float], pi) -> float:
    """∫ (factor(π·x) - 1) F(dx) for a finite-activity jump measure."""
    pi = np.asarray(pi, dtype=float)
    total = 0.0
    for atom in triplet.jumps.atoms:
        total += atom.lam * (factor(float(atom.x @ pi)) - 1.0)
    for part in triplet.jumps.densities:
        w = float(part.direction @ pi)
        value, _, _ = part.integrate(lambda s, w=w: factor(s * w) - 1.0, breaks=[-1.0 / w] if w else [])
        total += value
    return total


def exponential_levy_terminal(batch: PathBatch, continuous, factor: Callable[[float], float], pi) -> np.ndarray:
    """
    Terminal value of ℰ(continuous·R^c + {factor(π·x) - 1} * (μ - ν)) per path.
    """
    continuous = np.asarray(continuous, dtype=float)
    pi = np.asarray(pi, dtype=float)
    T = batch.T
    log_value = batch.continuous_part()[:, -1, :] @ continuous - 0.5 * float(continuous @ batch.c @ continuous) * T
    log_value = log_value - T * jump_compensator(batch.triplet, factor, pi)
    vectorized = np.vectorize(factor, otypes=[float])
    jumps, absorb = _jump_log_factors(batch, lambda marks: vectorized(marks @ pi))
    values = np.exp(log_value + jumps[:, -1])
    values[absorb < batch.grid.size] = 0.0
    return values


def density_terminal(batch: PathBatch, report) -> np.ndarray:
    """Z_T = dQ̂/dP on each path for a q-measure report."""
    p = report.p
    return exponential_levy_terminal(batch, (p - 1.0) * report.pi_hat,
                                     lambda u: (1.0 + u) ** (p - 1.0) if 1.0 + u > 0 else 0.0, report.pi_hat)


def verification_test(batch: PathBatch, solution: PortfolioSolution, curves: SolutionCurves,
                      problem: ProblemSpec, n_sigma: float = 3.0) -> VerificationReport:
    """
    Martingale checks behind the verification argument:
    E[Γ_T] = ℓ_0·x0^p with Γ = ℓX^p + δ∫κ̂ℓX^p ds, and E[ℰ(Ψ)_T] = 1 with
    Ψ = pπ̂·R^c + {(1 + π̂·x)^p - 1} * (μ - ν).
    """
    report = VerificationReport()
    if solution.pi_hat is None:
        logger.warning("No optimal portfolio; verification skipped")
        return report
    p, pi = problem.p, np.asarray(solution.pi_hat, dtype=float)
    wealth = wealth_paths(batch, pi, curves, problem.x0)
    grid = wealth.grid
    powered = np.where(wealth.values > 0, np.maximum(wealth.values, 1e-300) ** p, 0.0)
    ell = curves.ell(grid)
    gamma = ell[-1] * powered[:, -1]
    if curves.has_consumption:
        gamma = gamma + trapezoid(curves.kappa(grid)[None, :] * ell[None, :] * powered, grid, axis=1)
    mean, se = _mean_se(gamma)
    report.add("Gamma_T", mean, curves.ell(0.0) * problem.x0 ** p, se, n_sigma)

    psi = exponential_levy_terminal(batch, p * pi, lambda u: (1.0 + u) ** p if 1.0 + u > 0 else 0.0, pi)
    mean, se = _mean_se(psi)
    report.add("E(Psi)_T", mean, 1.0, se, n_sigma)
    return report


def perturbation_panel(pi_hat, n: int = 20, seed: int = 0, C: Optional[ConstraintSet] = None,
                       natural: Optional[NaturalConstraints] = None, scale: float = 0.25) -> List[np.ndarray]:
    """
    Deterministic panel of feasible portfolios around pi_hat.

    Radii are scale·max(1, |pi_hat|)·u with u uniform in [0.1, 1].
    """
    pi_hat = np.asarray(pi_hat, dtype=float)
    rng = block_generator(seed, 2 ** 32)
    radius = scale * max(1.0, float(np.linalg.norm(pi_hat)))
    panel: List[np.ndarray] = []
    for _ in range(100 * n):
        direction = rng.standard_normal(pi_hat.shape[0])
        direction /= np.linalg.norm(direction)
        candidate = pi_hat + radius * rng.uniform(0.1, 1.0) * direction
        if C is not None and not C.contains(candidate):
            continue
        if natural is not None and not natural.strictly_admissible(candidate):
            continue
        panel.append(candidate)
        if len(panel) == n:
            break
    return panel
