"""
Maximization of g over non-convex constraint sets.

Unions of convex pieces are solved piece by piece with the convex ascent;
star-shaped oracle sets get a multi-start radial search from a Sobol set of
directions followed by local gradient steps. The validity conditions under
which the constant portfolio found here is optimal are reported with the
result.
"""
import logging
import math
from typing import Dict, List, Optional, Tuple, Union as TypingUnion

import numpy as np
from scipy.optimize import linprog, minimize_scalar
from scipy.stats import qmc

from geometry.arbitrage import HOLDS, VIOLATED, ConstraintGeometry, analyze_geometry, nuip_check, projection_closedness
from geometry.constraints import ConstraintSet
from geometry.natural import NaturalConstraints, project_onto_N_perp
from market.levy import LevyTriplet
from market.problem import Tolerances
from solver.objective import GObjective, values_array
from solver.optimizer import (INFINITE_VALUE, NUIP_VIOLATED, FeasibleRegion, OptimizerSettings, PortfolioSolution,
                              safe_value, barrier_mask, classify_finiteness, classify_location,
                              minimal_norm_representative, solve_on_region)
from utils.errors import C3Violated, NuipViolated, PreconditionFailed, TailDivergence

logger = logging.getLogger(__name__)

C3_SHRINK = 1e-6


def _natural_of(geometry: TypingUnion[ConstraintGeometry, NaturalConstraints]) -> NaturalConstraints:
    return geometry.natural if isinstance(geometry, ConstraintGeometry) else geometry


def _cone_is_trivial(rows: np.ndarray) -> bool:
    """True if {y : rows·y <= 0} = {0}."""
    d = rows.shape[1]
    for i in range(d):
        for sign in (1.0, -1.0):
            objective = np.zeros(d)
            objective[i] = -sign
            result = linprog(objective, A_ub=rows, b_ub=np.zeros(rows.shape[0]),
                             bounds=[(-1.0, 1.0)] * d, method="highs")
            if result.status == 0 and -result.fun > 1e-9:
                return False
    return True


def feasible_set_compact(C: ConstraintSet, natural: NaturalConstraints) -> bool:
    """Whether C ∩ C0 is bounded (exact when every piece has known recession rows)."""
    if C.is_compact or natural.is_compact:
        return True
    for piece in C.pieces:
        if piece.is_compact:
            continue
        rec = piece.recession_rows()
        if rec is None:
            return False
        rows = np.vstack([rec, natural.G]) if natural.G.shape[0] else rec
        if rows.shape[0] == 0 or not _cone_is_trivial(rows):
            return False
    return True


# -- (C3) ---------------------------------------------------------------------

def _c3_exact(C: ConstraintSet, natural: NaturalConstraints) -> bool:
    """
    Polyhedral pieces: a point with an active atom row fails when it also
    activates a piece row with negative right-hand side and no other piece
    holds the slightly shrunk point.
    """
    G, r = natural.G, natural.r
    atoms = np.flatnonzero(natural.atom_rows)
    d = C.dim
    for piece in C.pieces:
        A, b = piece.linear_rows()
        A_ub = np.vstack([A, G]) if A.shape[0] else G
        b_ub = np.concatenate([b, r])
        for k in atoms:
            for i in np.flatnonzero(b < 0):
                result = linprog(np.zeros(d), A_ub=A_ub, b_ub=b_ub, A_eq=np.vstack([G[k], A[i]]),
                                 b_eq=np.array([r[k], b[i]]), bounds=[(None, None)] * d, method="highs")
                if result.status != 0:
                    continue
                shrunk = (1.0 - C3_SHRINK) * result.x
                if not C.contains(shrunk, 0.0):
                    logger.info(f"(C3) fails at {np.round(result.x, 8).tolist()}")
                    return False
    return True


def _c3_sampled(C: ConstraintSet, natural: NaturalConstraints, samples: int, seed: int) -> bool:
    """Sample points of C on atom faces of C0 and test ηy ∈ C for η close to 1."""
    d = C.dim
    G, r = natural.G, natural.r
    atoms = natural.atom_rows
    sobol = qmc.Sobol(d=d, scramble=True, seed=seed).random(samples)
    anchors = list(C.candidate_points())
    for u in 2.0 * sobol - 1.0:
        anchors.append(u)
    for base in anchors:
        growth = G[atoms] @ base
        if not np.any(growth > 0):
            continue
        t = float(np.min(r[atoms][growth > 0] / growth[growth > 0]))
        y = t * base
        if not natural.contains(y) or not C.contains(y):
            continue
        if not all(C.contains((1.0 - 2.0 ** (-k)) * y) for k in range(5, 21)):
            return False
    return True


def c3_is_exact(C: ConstraintSet) -> bool:
    return C.is_star_shaped or all(piece.linear_rows() is not None for piece in C.pieces)


def check_C3(C: ConstraintSet, geometry: TypingUnion[ConstraintGeometry, NaturalConstraints],
             samples: int = 512, seed: int = 0) -> bool:
    """
    Condition (C3): every y ∈ (C ∩ C0) without strict admissibility has ηy ∈ C
    for all η in some interval (η_0, 1).

    Exact for star-shaped sets and unions of polyhedra, sampled otherwise
    (a sampled True is probabilistic; see c3_is_exact).
    """
    natural = _natural_of(geometry)
    if C.is_star_shaped:
        return True
    if not natural.atom_rows.any() or not natural.atoms_can_bind():
        return True
    if c3_is_exact(C):
        return _c3_exact(C, natural)
    logger.warning("(C3) checked by sampling; the result is probabilistic")
    return _c3_sampled(C, natural, samples, seed)


# -- validity ------------------------------------------------------------------

def nonconvex_validity(triplet: LevyTriplet, C: ConstraintSet, p: float,
                       geometry: Optional[ConstraintGeometry] = None,
                       finiteness: Optional[str] = None) -> Dict:
    """
    Which sufficient condition makes the constant-portfolio solution optimal.

    Cases:
        star_shaped: C star-shaped, NUIP and closed projection for the closed
            convex hull (and u < ∞ for p > 0)
        compact: C ∩ C0 compact (with (C3) and u < ∞ for p > 0)
        compact_natural: C0 compact and u < ∞
    """
    geometry = geometry or analyze_geometry(triplet, C)
    natural = geometry.natural
    star = C.is_star_shaped
    compact = feasible_set_compact(C, natural)
    if C.is_convex:
        hull_nuip = geometry.nuip.status
    else:
        hull_nuip = nuip_check(triplet, C, natural, geometry.N_basis, hull=True).status
    hull_closed = projection_closedness(C, geometry.N_basis)
    c3 = True if p < 0 else check_C3(C, natural)
    finite = finiteness or classify_finiteness(triplet, C, p, geometry)
    value_finite = p < 0 or finite == "finite"

    cases = []
    if star and hull_nuip == HOLDS and hull_closed == "true" and value_finite:
        cases.append("star_shaped")
    if compact and (p < 0 or (c3 and value_finite)):
        cases.append("compact")
    if natural.is_compact and value_finite:
        cases.append("compact_natural")
    return {
        'star_shaped': star,
        'feasible_compact': compact,
        'natural_compact': natural.is_compact,
        'C3': c3,
        'C3_exact': c3_is_exact(C),
        'hull_nuip': hull_nuip,
        'hull_projection_closed': hull_closed,
        'finiteness': finite,
        'cases': cases,
        'valid': bool(cases),
    }


# -- search --------------------------------------------------------------------

def _natural_radial_bound(natural: NaturalConstraints, u: np.ndarray) -> float:
    if natural.is_everything:
        return math.inf
    growth = natural.G @ u
    positive = growth > 1e-15
    if not positive.any():
        return math.inf
    return float(np.min(natural.r[positive] / growth[positive]))


def _local_ascent(obj: GObjective, member, y: np.ndarray, val: float, steps: int,
                  tol: float) -> Tuple[np.ndarray, float]:
    """Gradient steps with backtracking on value and membership."""
    for _ in range(steps):
        try:
            grad = obj.gradient(y)
        except TailDivergence:
            break
        slope = float(grad @ grad)
        if slope <= tol:
            break
        t, moved = 1.0, False
        while t > 1e-12:
            cand = y + t * grad
            if member(cand):
                cand_val = safe_value(obj, cand)
                if cand_val > val + 1e-4 * t * slope:
                    moved = True
                    break
            t *= 0.5
        if not moved:
            break
        gain = cand_val - val
        y, val = cand, cand_val
        if gain <= tol * (1.0 + abs(val)):
            break
    return y, val


def _radial_search(obj: GObjective, piece: ConstraintSet, natural: NaturalConstraints,
                   settings: OptimizerSettings, tol: float) -> List[Tuple[float, np.ndarray]]:
    """Multi-start search over a star-shaped piece given by membership."""
    d = piece.dim
    count = settings.multistart_per_dim * d
    sobol = qmc.Sobol(d=d, scramble=False).random(count)
    cap = getattr(piece, 'radial_limit', settings.search_radius)

    def member(y):
        return piece.contains(y) and natural.strictly_admissible(y)

    found = []
    for u in 2.0 * sobol - 1.0:
        norm = float(np.linalg.norm(u))
        if norm == 0:
            continue
        u = u / norm
        reach = min(piece.radial_bound(u), _natural_radial_bound(natural, u), cap)
        if not reach > 0:
            continue
        grid = np.linspace(0.0, 1.0, settings.segment_points)
        values = values_array(obj.on_segment(reach * u, settings.segment_points))
        k = int(np.argmax(values))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        refined = minimize_scalar(lambda lam: -safe_value(obj, lam * reach * u), bounds=(lo, hi),
                                  method="bounded", options={'xatol': 1e-10})
        lam = refined.x if -refined.fun > values[k] else grid[k]
        y = lam * reach * u
        if not member(y):
            y = grid[k] * reach * u
            if not member(y):
                continue
        val = safe_value(obj, y)
        y, val = _local_ascent(obj, member, y, val, settings.local_steps, tol)
        found.append((val, y))
    found.append((safe_value(obj, np.zeros(d)), np.zeros(d)))
    return found


def _piece_start(piece: ConstraintSet, region: FeasibleRegion) -> Optional[np.ndarray]:
    for point in piece.candidate_points():
        if region.contains(point):
            return point
    start = region.project(np.zeros(piece.dim))
    return start if region.contains(start, 1e-7) else None


def _solve_piece(obj: GObjective, piece: ConstraintSet, natural: NaturalConstraints,
                 settings: OptimizerSettings, tol: float) -> Optional[Tuple[float, np.ndarray, int]]:
    mask = barrier_mask(natural, obj.p)
    first = FeasibleRegion(piece, natural, mask, 0.5 if mask.any() else 0.0)
    start = _piece_start(piece, first)
    if start is None:
        logger.debug(f"{piece.kind} piece has no strictly admissible point; skipped")
        return None
    y, val, its, _, _ = solve_on_region(obj, piece, natural, settings, tol, y0=start)
    return val, y, its


def _reduce(found: List[Tuple[float, np.ndarray]], basis: np.ndarray,
            settings: OptimizerSettings) -> Tuple[float, np.ndarray, List[np.ndarray]]:
    """Best point by (value desc, lexicographic argument) and distinct near-ties."""
    ordered = sorted(found, key=lambda item: (-item[0], tuple(np.round(item[1], 12))))
    best_val, best = ordered[0]
    others: List[np.ndarray] = []
    kept = [project_onto_N_perp(best, basis)]
    for val, y in ordered[1:]:
        if val < best_val - settings.argmax_tol * (1.0 + abs(best_val)):
            break
        reduced = project_onto_N_perp(y, basis)
        if all(np.linalg.norm(reduced - k) > 1e-3 for k in kept):
            kept.append(reduced)
            others.append(y)
    return best_val, best, others


def maximize_nonconvex(
    triplet: LevyTriplet,
    C: ConstraintSet,
    p: float,
    tolerances: Optional[Tolerances] = None,
    settings: Optional[OptimizerSettings] = None,
    geometry: Optional[ConstraintGeometry] = None,
    strict: bool = False,
) -> PortfolioSolution:
    """
    Maximize g over a star-shaped set or a set with compact C ∩ C0.

    Raises:
        PreconditionFailed: neither star-shaped nor compact
        C3Violated: p in (0, 1), C not star-shaped and (C3) fails
        NuipViolated: strict mode and NUIP fails for the closed convex hull
    """
    tolerances = tolerances or Tolerances()
    settings = settings or OptimizerSettings()
    geometry = geometry or analyze_geometry(triplet, C, tolerances.kernel)
    natural = geometry.natural
    compact = feasible_set_compact(C, natural)
    if not (C.is_star_shaped or compact):
        raise PreconditionFailed("constraint set is neither star-shaped nor has compact intersection with C0")
    if p > 0 and not C.is_star_shaped and not check_C3(C, natural):
        raise C3Violated("(C3) fails: a boundary point of C ∩ C0 cannot be approached radially within C")

    if not compact:
        verdict = nuip_check(triplet, C, natural, geometry.N_basis, hull=True, tol=tolerances.kernel)
        if verdict.status == VIOLATED:
            if strict:
                raise NuipViolated(f"NUIP fails for the closed convex hull: {verdict.reason}", witness=verdict.witness)
            return PortfolioSolution(p=p, pi_hat=None, g_star=math.nan, verdict=NUIP_VIOLATED, attained=False,
                                     witness=verdict.witness, notes=[verdict.reason])

    finiteness = classify_finiteness(triplet, C, p, geometry)
    validity = nonconvex_validity(triplet, C, p, geometry, finiteness)
    if finiteness == "infinite":
        return PortfolioSolution(p=p, pi_hat=None, g_star=math.inf, verdict=INFINITE_VALUE, attained=False,
                                 validity=validity)

    obj = GObjective(triplet, p, tolerances)
    found: List[Tuple[float, np.ndarray]] = []
    owner: Dict[int, ConstraintSet] = {}
    iterations = 0
    for piece in C.pieces:
        if piece.is_convex:
            result = _solve_piece(obj, piece, natural, settings, tolerances.optimizer)
            if result is None:
                continue
            val, y, its = result
            iterations += its
            owner[len(found)] = piece
            found.append((val, y))
        else:
            found.extend(_radial_search(obj, piece, natural, settings, tolerances.optimizer))

    best_val, best, others = _reduce(found, geometry.N_basis, settings)
    if math.isinf(best_val) and best_val > 0:
        return PortfolioSolution(p=p, pi_hat=None, g_star=math.inf, verdict=INFINITE_VALUE, attained=False,
                                 validity=validity)

    representative = "as_found"
    piece = next((owner[i] for i, (v, y) in enumerate(found) if i in owner and y is best), None)
    if piece is not None:
        region = FeasibleRegion(piece, natural, np.zeros(len(natural.r), dtype=bool))
        candidate, representative = minimal_norm_representative(best, geometry.N_basis, region)
        if abs(safe_value(obj, candidate) - best_val) <= 1e-9 * (1.0 + abs(best_val)):
            best = candidate
    if not validity['valid']:
        logger.warning("No sufficient optimality condition applies to this non-convex set")
    location = classify_location(best, C, natural)
    logger.info(f"Non-convex solution: pi_hat = {np.round(best, 8).tolist()}, g* = {best_val:.12g}, "
                f"{len(others)} other near-argmax point(s)")
    return PortfolioSolution(
        p=p,
        pi_hat=best,
        g_star=best_val,
        location=location,
        G_at_zero=obj.directional(np.zeros_like(best), best),
        iterations=iterations,
        representative=representative,
        other_argmax=others,
        validity=validity,
    )
