"""
Immediate arbitrage (J), the NUIP verdict and projection closedness.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.linalg import null_space as kernel
from scipy.optimize import linprog, minimize

from geometry.constraints import ConstraintSet
from geometry.natural import NaturalConstraints, natural_constraints, null_space, recession_generators
from market.levy import LevyTriplet, cutoff, part_cutoff_moment

logger = logging.getLogger(__name__)

HOLDS = "holds"
VIOLATED = "violated"
UNDECIDABLE = "undecidable"


@dataclass
class NuipVerdict:
    """Outcome of the NUIP test; witness is a unit vector of (C∩C0)ˇ ∩ J."""

    status: str
    witness: Optional[np.ndarray] = None
    reason: str = ""

    @property
    def holds(self) -> bool:
        return self.status == HOLDS

    def to_dict(self) -> Dict:
        return {
            'status': self.status,
            'witness': None if self.witness is None else [float(v) for v in self.witness],
            'reason': self.reason,
        }


@dataclass
class ConstraintGeometry:
    """Geometry of (triplet, C): C0, N, recession generators and verdicts."""

    natural: NaturalConstraints
    N_basis: np.ndarray
    nuip: NuipVerdict
    projection_closed: str
    recession_rays: Optional[np.ndarray] = None
    j_empty: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.natural.dim

    def to_dict(self) -> Dict:
        return {
            'C0': self.natural.to_dict(),
            'N_basis': self.N_basis.T.tolist(),
            'nuip': self.nuip.to_dict(),
            'projection_closed': self.projection_closed,
            'recession_rays': None if self.recession_rays is None else self.recession_rays.tolist(),
            'J_empty': self.j_empty,
            'notes': list(self.notes),
        }


def _j_rows(triplet: LevyTriplet, natural: NaturalConstraints):
    """
    Linear description of the closed cone {y : c y = 0, y·x >= 0 on supp F,
    y·(b - ∫h dF) >= 0} together with the recession rows of C0.

    Returns:
        (A_ub, A_eq) with the cone equal to {A_ub y <= 0, A_eq y = 0}
    """
    d = triplet.dim
    ub: List[np.ndarray] = []
    eq: List[np.ndarray] = [row for row in triplet.c]
    drift = triplet.b.copy()
    for atom in triplet.jumps.atoms:
        ub.append(-atom.x)
        drift = drift - atom.lam * cutoff(atom.x)
    for part in triplet.jumps.densities:
        v = part.direction
        if part.lo >= 0:
            ub.append(-v)
        elif part.hi <= 0:
            ub.append(v)
        else:
            eq.append(v)
        moment = part_cutoff_moment(part)
        if math.isinf(moment):
            eq.append(v)
        else:
            drift = drift - moment * v
    ub.append(-drift)
    if not natural.is_everything:
        ub.extend(natural.G)
    A_ub = np.vstack(ub) if ub else np.zeros((0, d))
    A_eq = np.vstack(eq) if eq else np.zeros((0, d))
    return A_ub, A_eq


def _lp_witness(A_ub, A_eq, perp: np.ndarray, d: int, n_extra: int = 0,
                tol: float = 1e-9) -> Optional[np.ndarray]:
    """Search the cone for a vector with nonzero N-perp component (first d variables)."""
    n = d + n_extra
    bounds = [(-1.0, 1.0)] * d + [(None, None)] * n_extra
    for u in perp.T:
        for sign in (1.0, -1.0):
            objective = np.zeros(n)
            objective[:d] = -sign * u
            result = linprog(
                objective,
                A_ub=A_ub if A_ub.shape[0] else None,
                b_ub=np.zeros(A_ub.shape[0]) if A_ub.shape[0] else None,
                A_eq=A_eq if A_eq.shape[0] else None,
                b_eq=np.zeros(A_eq.shape[0]) if A_eq.shape[0] else None,
                bounds=bounds,
                method="highs",
            )
            if result.status == 0 and -result.fun > tol:
                y = result.x[:d]
                return y / np.linalg.norm(y)
    return None


def _lift(rows: np.ndarray, slot: int, total: int, d: int) -> np.ndarray:
    out = np.zeros((rows.shape[0], d * total))
    out[:, slot * d:(slot + 1) * d] = rows
    return out


def nuip_check(
    triplet: LevyTriplet,
    C: ConstraintSet,
    natural: Optional[NaturalConstraints] = None,
    basis: Optional[np.ndarray] = None,
    hull: bool = False,
    tol: float = 1e-9,
) -> NuipVerdict:
    """
    Decide NUIP: no y in (C∩C0)ˇ ∩ J.

    J is tested first without any constraint rows; when it is empty the
    verdict holds for every C. Polyhedral recession cones are handled by LP,
    second-order cones by a seeded conic search (undecidable when it finds
    no witness), unions piece by piece (or
    through the Minkowski sum of recession cones when `hull` is set).

    Returns:
        NuipVerdict; never raises
    """
    d = triplet.dim
    natural = natural if natural is not None else natural_constraints(triplet)
    basis = basis if basis is not None else null_space(triplet, tol)
    perp = kernel(basis.T, rcond=tol) if basis.shape[1] else np.eye(d)
    if perp.shape[1] == 0:
        return NuipVerdict(HOLDS, reason="N is the whole space")

    A_ub, A_eq = _j_rows(triplet, natural)
    if _lp_witness(A_ub, A_eq, perp, d, tol=tol) is None:
        return NuipVerdict(HOLDS, reason="J is empty")

    if C.is_compact:
        return NuipVerdict(HOLDS, reason="C is compact")

    if hull and not C.is_convex:
        return _nuip_hull(C, A_ub, A_eq, perp, d, tol)

    searched: List[str] = []
    for piece in C.pieces:
        if piece.is_compact:
            continue
        rec = piece.recession_rows()
        if rec is not None:
            stacked = np.vstack([A_ub, rec]) if rec.shape[0] else A_ub
            witness = _lp_witness(stacked, A_eq, perp, d, tol=tol)
        elif piece.is_cone:
            witness = _conic_witness(piece, A_ub, A_eq, perp, d, tol)
            if witness is None:
                searched.append(piece.kind)
                continue
        else:
            return NuipVerdict(UNDECIDABLE, reason=f"recession cone of {piece.kind} set unknown and J is nonempty")
        if witness is not None:
            logger.info(f"NUIP violated, witness {np.round(witness, 6).tolist()}")
            return NuipVerdict(VIOLATED, witness=witness, reason=f"recession cone of {piece.kind} meets J")
    if searched:
        logger.warning(f"No witness found on the {', '.join(searched)} cone(s); NUIP left undecided")
        return NuipVerdict(UNDECIDABLE, reason=f"conic search found no witness on {', '.join(searched)}")
    return NuipVerdict(HOLDS, reason="recession cone misses J")


def _nuip_hull(C: ConstraintSet, A_ub, A_eq, perp, d: int, tol: float) -> NuipVerdict:
    """NUIP for the closed convex hull: recession cone = sum of the pieces' cones."""
    cones = []
    for piece in C.pieces:
        if piece.is_compact:
            continue
        rec = piece.recession_rows()
        if rec is None:
            return NuipVerdict(UNDECIDABLE, reason=f"recession cone of {piece.kind} piece unknown")
        cones.append(rec)
    if not cones:
        return NuipVerdict(HOLDS, reason="all pieces compact")
    total = 1 + len(cones)
    ub = [_lift(A_ub, 0, total, d)]
    eq = [_lift(A_eq, 0, total, d)] if A_eq.shape[0] else []
    for slot, rec in enumerate(cones, start=1):
        if rec.shape[0]:
            ub.append(_lift(rec, slot, total, d))
    link = _lift(np.eye(d), 0, total, d)
    for slot in range(1, total):
        link -= _lift(np.eye(d), slot, total, d)
    eq.append(link)
    witness = _lp_witness(np.vstack(ub), np.vstack(eq), perp, d, n_extra=d * len(cones), tol=tol)
    if witness is None:
        return NuipVerdict(HOLDS, reason="recession cone of the convex hull misses J")
    return NuipVerdict(VIOLATED, witness=witness, reason="recession cone of the convex hull meets J")


def _nonzero_rows(A: np.ndarray, tol: float) -> np.ndarray:
    if A.shape[0] == 0:
        return A
    return A[np.linalg.norm(A, axis=1) > tol]


def _conic_seeds(cone: ConstraintSet, A_ub: np.ndarray, A_eq: np.ndarray, d: int, tol: float) -> List[np.ndarray]:
    """Unit start points: the cone's own points, rays of the polyhedral part, and their projections onto the cone."""
    seeds = [point for point in cone.candidate_points() if np.linalg.norm(point) > tol]
    rows = [A_ub] + ([A_eq, -A_eq] if A_eq.shape[0] else [])
    stacked = np.vstack(rows) if any(r.shape[0] for r in rows) else np.zeros((0, d))
    rays = list(recession_generators(stacked, tol))
    seeds += rays
    projector = getattr(cone, 'project', None)
    if projector is not None:
        seeds += [projector(ray) for ray in rays]
    out = []
    for seed in seeds:
        norm = float(np.linalg.norm(seed))
        if norm > tol:
            out.append(np.clip(seed / norm, -1.0, 1.0))
    return out


def _conic_witness(cone: ConstraintSet, A_ub, A_eq, perp, d: int, tol: float) -> Optional[np.ndarray]:
    """
    Same search as the LP, with the cone's own constraints: admissible seeds
    are accepted directly, otherwise SLSQP climbs from each seed. None means
    the search found nothing, which proves nothing.
    """
    A_ub = _nonzero_rows(A_ub, tol)
    A_eq = _nonzero_rows(A_eq, tol)

    def admissible(y: np.ndarray) -> bool:
        return (cone.contains(y, 1e-7)
                and (A_ub.shape[0] == 0 or np.all(A_ub @ y <= 1e-7))
                and (A_eq.shape[0] == 0 or np.all(np.abs(A_eq @ y) <= 1e-7)))

    seeds = _conic_seeds(cone, A_ub, A_eq, d, tol)
    for y in seeds:
        if admissible(y) and float(np.linalg.norm(perp.T @ y)) > 1e-6:
            return y / np.linalg.norm(y)

    constraints = list(cone.scipy_constraints())
    if A_ub.shape[0]:
        constraints.append({'type': 'ineq', 'fun': lambda y: -A_ub @ y, 'jac': lambda y: -A_ub})
    if A_eq.shape[0]:
        constraints.append({'type': 'eq', 'fun': lambda y: A_eq @ y, 'jac': lambda y: A_eq})
    for u in perp.T:
        for sign in (1.0, -1.0):
            for start in seeds:
                result = minimize(lambda y: -sign * float(u @ y), start, jac=lambda y: -sign * u,
                                  bounds=[(-1.0, 1.0)] * d, constraints=constraints, method="SLSQP",
                                  options={'ftol': 1e-12, 'maxiter': 300})
                y = result.x
                # any admissible point with a positive N-perp component is a witness
                if admissible(y) and sign * float(u @ y) > 1e-6:
                    return y / np.linalg.norm(y)
    return None


def projection_closedness(C: ConstraintSet, basis: np.ndarray, probe: float = 1e3) -> str:
    """
    Sufficient conditions for the projection of C∩C0 onto N-perp to be closed.

    Returns:
        'true' when C is polyhedral, compact, N = {0}, or convex with N ⊆ C;
        'unknown' otherwise (never 'false')
    """
    if basis.shape[1] == 0:
        return "true"
    if C.is_polyhedral or C.is_compact:
        return "true"
    if C.is_convex:
        inside = all(C.contains(sign * probe * n) for n in basis.T for sign in (1.0, -1.0))
        if inside:
            return "true"
    return "unknown"


def dense_strict_interior(C: ConstraintSet, natural: NaturalConstraints) -> bool:
    """True when C∩C0'* is dense in C∩C0 (star-shaped C, or C0'* = C0)."""
    if C.is_star_shaped:
        return True
    return not natural.atoms_can_bind()


def analyze_geometry(triplet: LevyTriplet, C: ConstraintSet, tol: float = 1e-9) -> ConstraintGeometry:
    """Compute C0, N, recession generators, the NUIP verdict and closedness."""
    natural = natural_constraints(triplet)
    basis = null_space(triplet, tol)
    verdict = nuip_check(triplet, C, natural, basis, tol=tol)
    rays = None
    rows = C.recession_rows()
    if rows is not None and C.is_convex:
        stacked = np.vstack([rows, natural.G]) if natural.G.shape[0] else rows
        rays = recession_generators(stacked, tol)
    closed = projection_closedness(C, basis)
    geometry = ConstraintGeometry(
        natural=natural,
        N_basis=basis,
        nuip=verdict,
        projection_closed=closed,
        recession_rays=rays,
        j_empty=verdict.reason == "J is empty",
    )
    logger.info(
        f"Geometry: dim N = {basis.shape[1]}, NUIP {verdict.status} ({verdict.reason}), "
        f"projection closed: {closed}"
    )
    return geometry
