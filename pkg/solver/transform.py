"""
Model transformation R -> ΛR making tradable assets strictly positive.

Step i replaces row i of the identity by a vector y_i of the current
C ∩ C0'* with y_i^i != 0, so the new asset i is a strictly positive
portfolio; if no such vector is found the row becomes zero and the
component is treated as untradable.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import qmc

from geometry.constraints import Ball, ConstraintSet, Intersection, PulledBack
from geometry.natural import NaturalConstraints, natural_constraints
from market.levy import LevyTriplet, cutoff
from utils.errors import DomainError

logger = logging.getLogger(__name__)

DYADIC_LEVELS = 40
SOBOL_POINTS_LOG2 = 8


@dataclass
class ModelTransform:
    """Λ with its construction steps and the pulled-back constraint set C̃."""

    Lambda: np.ndarray
    steps: List[np.ndarray]
    pinv_T: np.ndarray
    C_tilde: ConstraintSet
    untradable: List[int] = field(default_factory=list)

    def map_portfolio_back(self, z) -> np.ndarray:
        """Λᵀz; raises DomainError if z is outside C̃."""
        z = np.asarray(z, dtype=float)
        if not self.C_tilde.contains(z):
            raise DomainError(f"z = {np.round(z, 8).tolist()} is outside the transformed constraints")
        return self.Lambda.T @ z

    def map_portfolio_forward(self, y) -> np.ndarray:
        """A z with Λᵀz = y for y in the range of Λᵀ (pseudo-inverse)."""
        return self.pinv_T @ np.asarray(y, dtype=float)

    def to_dict(self) -> Dict:
        return {
            'Lambda': self.Lambda.tolist(),
            'steps': [s.tolist() for s in self.steps],
            'untradable': list(self.untradable),
        }


def _candidate_z(d: int, M: np.ndarray, C: ConstraintSet) -> List[np.ndarray]:
    """Non-axis candidates: Sobol points of [-1, 1]^d and preimages of C's points."""
    sobol = qmc.Sobol(d=d, scramble=False).random_base2(m=SOBOL_POINTS_LOG2)
    points = list(2.0 * sobol - 1.0)
    pinv = np.linalg.pinv(M.T)
    points += list(C.candidate_points() @ pinv.T)
    return points


def _pick_step(i: int, d: int, M: np.ndarray, C: ConstraintSet, natural: NaturalConstraints,
               tol: float) -> Optional[np.ndarray]:
    """Choose y_i in current coordinates; None if no feasible vector has y^i != 0."""

    def feasible(z: np.ndarray) -> bool:
        y = M.T @ z
        return C.contains(y, tol) and natural.strictly_admissible(y, tol)

    # axis points ±2^-k e_i first, largest first, positive before negative;
    # steps within the membership tolerance do not move component i
    for k in range(DYADIC_LEVELS):
        for sign in (1.0, -1.0):
            z = np.zeros(d)
            z[i] = sign * 2.0 ** (-k)
            if abs(z[i]) > tol and feasible(z):
                return z

    best = None
    for z in _candidate_z(d, M, C):
        if abs(z[i]) <= tol or not feasible(z):
            continue
        key = (-abs(z[i]), float(np.linalg.norm(z)), 0 if z[i] > 0 else 1)
        if best is None or key < best[0]:
            best = (key, z)
    return None if best is None else best[1]


def build_transform(triplet: LevyTriplet, C: ConstraintSet, tol: float = 1e-9) -> ModelTransform:
    """
    Construct Λ = Λ_d ··· Λ_1 and the transformed constraint set.

    Args:
        triplet: Original model
        C: Constraint set in original coordinates
        tol: Membership tolerance

    Returns:
        ModelTransform; compact C yields a compact C̃ (intersection with a ball)
    """
    d = triplet.dim
    natural = natural_constraints(triplet)
    M = np.eye(d)
    steps: List[np.ndarray] = []
    untradable: List[int] = []
    for i in range(d):
        z = _pick_step(i, d, M, C, natural, tol)
        if z is None:
            logger.warning(f"No strictly admissible portfolio moves component {i}; treated as untradable")
            z = np.zeros(d)
            untradable.append(i)
        step = np.eye(d)
        step[i] = z
        M = step @ M
        steps.append(z)
        logger.debug(f"Transform step {i}: y = {np.round(z, 6).tolist()}")

    pinv_T = np.linalg.pinv(M.T)
    C_tilde: ConstraintSet = PulledBack(C, M.T)
    if C.is_compact:
        radius = max(1.0, 2.0 * _max_image_norm(C, pinv_T))
        C_tilde = Intersection([C_tilde, Ball(np.zeros(d), radius)])
    logger.info(f"Transform built: Λ = {np.round(M, 6).tolist()}, untradable = {untradable}")
    return ModelTransform(Lambda=M, steps=steps, pinv_T=pinv_T, C_tilde=C_tilde, untradable=untradable)


def _max_image_norm(C: ConstraintSet, P: np.ndarray) -> float:
    """Upper bound of |P y| over compact C (exact on polytopes)."""
    norms = []
    for piece in C.pieces:
        if isinstance(piece, Ball):
            norms.append(float(np.linalg.norm(P @ piece.center)) + piece.radius * float(np.linalg.norm(P, 2)))
        else:
            points = piece.candidate_points()
            norms.append(float(np.max(np.linalg.norm(points @ P.T, axis=1))))
    return max(norms)


def transform_triplet(triplet: LevyTriplet, Lambda, tol: float = 1e-12) -> LevyTriplet:
    """
    Triplet of ΛR under the fixed cutoff h.

    b̃ = Λb + ∫[h(Λx) - Λh(x)] F(dx), c̃ = ΛcΛᵀ, F̃ = image of F under Λ.
    """
    L = np.atleast_2d(np.asarray(Lambda, dtype=float))
    b = L @ triplet.b
    for atom in triplet.jumps.atoms:
        b = b + atom.lam * (cutoff(L @ atom.x) - L @ cutoff(atom.x))
    for part in triplet.jumps.densities:
        image = L @ part.direction
        norm_image = float(np.linalg.norm(image))
        if norm_image <= tol:
            continue
        old_edge, new_edge = 1.0 / part.norm_v, 1.0 / norm_image
        if abs(old_edge - new_edge) <= 1e-15:
            continue
        inner, outer = min(old_edge, new_edge), max(old_edge, new_edge)
        # h(sΛv) - Λh(sv) = Λv·s·(1{|s| <= new_edge} - 1{|s| <= old_edge})
        sign = 1.0 if new_edge > old_edge else -1.0
        moment = 0.0
        for lo, hi in ((inner, outer), (-outer, -inner)):
            value, _, _ = part.integrate(lambda s: s, lo=lo, hi=hi)
            moment += value
        b = b + sign * moment * image
    c = L @ triplet.c @ L.T
    jumps = triplet.jumps.mapped(L, tol)
    return LevyTriplet(b=b, c=0.5 * (c + c.T), jumps=jumps)


def map_portfolio_back(z, transform: ModelTransform) -> np.ndarray:
    return transform.map_portfolio_back(z)
