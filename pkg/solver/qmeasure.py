"""
q-optimal martingale measure for unconstrained problems without consumption.

Q̂ exists iff the optimal portfolio has no drift residual G(0, π̂) = 0. Its
Girsanov pair is constant: (p-1)π̂ for the continuous part and the jump factor
(1 + π̂·x)^(p-1), and R stays a Lévy process under Q̂ with

    c_Q = c,  F_Q = (1 + π̂·x)^(p-1) F,
    b_Q = b + (p-1)cπ̂ + ∫ h(x)[(1 + π̂·x)^(p-1) - 1] F(dx).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from geometry.constraints import Reals
from market.densities import check_quadrature
from market.levy import Atom, JumpMeasure, LevyTriplet, cutoff, total_activity
from market.problem import ProblemSpec, Tolerances
from solver.objective import GObjective, _json_real
from solver.optimizer import PortfolioSolution
from utils.errors import PreconditionFailed, TailDivergence

logger = logging.getLogger(__name__)

MARGINAL_BAND = 10.0


@dataclass
class QMeasureReport:
    """Existence verdict, Girsanov parameters and the triplet of R under Q̂."""

    p: float
    exists: bool
    drift_residual: float
    pi_hat: np.ndarray
    tolerance: float
    marginal: bool = False
    triplet_under_Q: Optional[LevyTriplet] = None
    residuals: Optional[np.ndarray] = None
    compensator_shift: float = math.nan
    notes: List[str] = field(default_factory=list)

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def girsanov_continuous(self) -> np.ndarray:
        return (self.p - 1.0) * self.pi_hat

    def girsanov_jump(self, x) -> np.ndarray:
        """(1 + π̂·x)^(p-1), row-wise for a matrix of jumps."""
        x = np.asarray(x, dtype=float)
        return (1.0 + x @ self.pi_hat) ** (self.p - 1.0)

    def to_dict(self) -> Dict:
        return {
            'p': self.p,
            'q': self.q,
            'exists': self.exists,
            'marginal': self.marginal,
            'drift_residual': _json_real(self.drift_residual),
            'tolerance': self.tolerance,
            'pi_hat': [float(v) for v in self.pi_hat],
            'girsanov_continuous': [float(v) for v in self.girsanov_continuous],
            'compensator_shift': _json_real(self.compensator_shift),
            'martingale_residuals': None if self.residuals is None else [float(v) for v in self.residuals],
            'triplet_under_Q': None if self.triplet_under_Q is None else self.triplet_under_Q.to_dict(),
            'notes': list(self.notes),
        }


def measure_change_triplet(triplet: LevyTriplet, pi_hat: np.ndarray, p: float,
                           tolerances: Optional[Tolerances] = None) -> LevyTriplet:
    """Triplet of R under the measure with Girsanov pair ((p-1)π̂, (1+π̂·x)^(p-1))."""
    tol = tolerances or Tolerances()
    pi_hat = np.asarray(pi_hat, dtype=float)
    b = triplet.b + (p - 1.0) * (triplet.c @ pi_hat)
    atoms = []
    for atom in triplet.jumps.atoms:
        factor = (1.0 + float(atom.x @ pi_hat)) ** (p - 1.0)
        atoms.append(Atom(atom.x, atom.lam * factor))
        b = b + atom.lam * (factor - 1.0) * cutoff(atom.x)
    densities = []
    for part in triplet.jumps.densities:
        w = float(part.direction @ pi_hat)
        if w == 0.0:
            densities.append(part)
            continue
        densities.append(part.tilted(w, p - 1.0))
        edge = 1.0 / part.norm_v
        value, err, warned = part.integrate(lambda s, w=w: s * ((1.0 + s * w) ** (p - 1.0) - 1.0),
                                            breaks=[0.0], epsrel=tol.quad_rel, epsabs=tol.quad_abs,
                                            lo=-edge, hi=edge)
        check_quadrature(value, err, warned, tol.quad_fail, "drift under Q")
        b = b + value * part.direction
    return LevyTriplet(b=b, c=triplet.c.copy(), jumps=JumpMeasure(atoms, densities))


def martingale_residuals(triplet_under_Q: LevyTriplet, tolerances: Optional[Tolerances] = None) -> np.ndarray:
    """
    b_Q + ∫ (x - h(x)) F_Q(dx) per asset: the drift of the price processes
    under Q̂, zero for a martingale measure.

    Raises:
        TailDivergence: ∫|x| F_Q diverges in a tail
    """
    tol = tolerances or Tolerances()
    residual = np.array(triplet_under_Q.b, dtype=float)
    for atom in triplet_under_Q.jumps.atoms:
        residual = residual + atom.lam * (atom.x - cutoff(atom.x))
    for part in triplet_under_Q.jumps.densities:
        if not part.bounded and not part.require_tail().moment_finite(1.0):
            raise TailDivergence(f"{part.kind} density has no first moment under Q; prices are not Q-martingales")
        edge = 1.0 / part.norm_v
        value = 0.0
        for lo, hi in ((edge, None), (None, -edge)):
            piece, err, warned = part.integrate(lambda s: s, epsrel=tol.quad_rel, epsabs=tol.quad_abs, lo=lo, hi=hi)
            check_quadrature(piece, err, warned, tol.quad_fail, "martingale residual")
            value += piece
        residual = residual + value * part.direction
    return residual


def q_optimal_exists(
    triplet: LevyTriplet,
    p: float,
    solution: PortfolioSolution,
    problem: Optional[ProblemSpec] = None,
    tolerances: Optional[Tolerances] = None,
) -> QMeasureReport:
    """
    Decide existence of the q-optimal measure, q = p/(p-1).

    Raises:
        PreconditionFailed: consumption, constraints, or no attained maximizer
    """
    tol = tolerances or (problem.tolerances if problem is not None else Tolerances())
    if p == 0 or not p < 1:
        raise PreconditionFailed(f"p must lie in (-inf, 0) or (0, 1), got {p}")
    if problem is not None:
        if problem.delta != 0:
            raise PreconditionFailed("the q-optimal measure is only defined for problems without consumption")
        if not isinstance(problem.constraints, Reals):
            raise PreconditionFailed("the q-optimal measure is only defined for unconstrained portfolios (C = R^d)")
    if solution.pi_hat is None:
        raise PreconditionFailed(f"no optimal portfolio available (verdict {solution.verdict})")

    pi_hat = np.asarray(solution.pi_hat, dtype=float)
    objective = GObjective(triplet, p, tol)
    residual = objective.directional(np.zeros_like(pi_hat), pi_hat)
    limit = tol.drift_residual
    exists = math.isfinite(residual) and abs(residual) <= limit
    marginal = math.isfinite(residual) and limit / MARGINAL_BAND <= abs(residual) <= limit * MARGINAL_BAND
    report = QMeasureReport(p=p, exists=exists, drift_residual=residual, pi_hat=pi_hat,
                            tolerance=limit, marginal=marginal)
    if marginal:
        logger.warning(f"Drift residual {residual:.3e} is close to the tolerance {limit:.1e}; verdict is marginal")
        report.notes.append("marginal")
    if not exists:
        logger.info(f"q-optimal measure does not exist: G(0, pi_hat) = {residual:.6g}")
        return report

    report.triplet_under_Q = measure_change_triplet(triplet, pi_hat, p, tol)
    try:
        report.residuals = martingale_residuals(report.triplet_under_Q, tol)
    except TailDivergence as e:
        logger.warning(str(e))
        report.notes.append(str(e))
    activity = total_activity(triplet)
    if math.isfinite(activity):
        report.compensator_shift = total_activity(report.triplet_under_Q) - activity
    logger.info(f"q-optimal measure exists (q = {report.q:.6g}), residuals = {report.residuals}")
    return report
