"""
Maximization of g over C ∩ C0 for convex C.

Feasible-direction projected Newton: each iteration maximizes the concave
quadratic model of g over the feasible region (the exact Newton point when it
is feasible, an SLSQP solve otherwise) and backtracks along the segment to
the model maximizer. Iterates stay feasible because the region is convex.

Atom halfspaces of C0 (all C0 halfspaces when p < 0) are pulled inward by a
factor 1 - mu with mu = 2^-k driven to zero. When closedness of the effective
domain cannot be certified the problem is solved on C ∩ B_R for growing R,
and a maximizer that keeps sitting on the sphere while values plateau is
reported as a supremum without maximizer.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from geometry.arbitrage import ConstraintGeometry, VIOLATED, analyze_geometry
from geometry.constraints import ConstraintSet
from geometry.natural import NaturalConstraints, project_onto_N_perp
from market.levy import LevyTriplet, pth_moment_finite
from market.problem import Tolerances
from solver.objective import GObjective, _json_real
from solver.transform import build_transform, transform_triplet
from utils.errors import DomainError, NuipViolated, ProjectionNotClosed, TailDivergence, UnboundedSupportWithoutTailModel

logger = logging.getLogger(__name__)

FINITE = "finite"
INFINITE_VALUE = "infinite_value"
NUIP_VIOLATED = "nuip_violated"


@dataclass
class OptimizerSettings:
    """Iteration limits and continuation schedules."""

    max_iter: int = 100
    multistart_per_dim: int = 64
    divergence_radius: float = 1e8
    first_radius: float = 10.0
    plateau_tol: float = 1e-7
    stationarity_tol: float = 1e-7
    barrier_levels: int = 40
    segment_points: int = 33
    local_steps: int = 50
    search_radius: float = 100.0
    argmax_tol: float = 1e-7

    @classmethod
    def from_dict(cls, values: Optional[Dict]) -> "OptimizerSettings":
        if not values:
            return cls()
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key in known:
                kwargs[key] = int(float(value)) if known[key] in (int, 'int') else float(value)
        return cls(**kwargs)


@dataclass
class PortfolioSolution:
    """
    Optimal constant portfolio and value of the reduced problem.

    pi_hat is None when the supremum is not attained (or not finite);
    `approach` then holds the N-perp projection of the last iterate.
    """

    p: float
    pi_hat: Optional[np.ndarray]
    g_star: float
    location: str = "interior"
    G_at_zero: float = 0.0
    verdict: str = FINITE
    attained: bool = True
    iterations: int = 0
    tolerance: float = 0.0
    representative: str = "minimal_norm"
    approach: Optional[np.ndarray] = None
    witness: Optional[np.ndarray] = None
    other_argmax: List[np.ndarray] = field(default_factory=list)
    validity: Dict = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    @property
    def a(self) -> float:
        """p/(1-p)·g*; depends on the solution only through g_star."""
        return self.p / (1.0 - self.p) * self.g_star

    def to_dict(self) -> Dict:
        def vec(v):
            return None if v is None else [float(x) for x in v]

        return {
            'p': self.p,
            'pi_hat': vec(self.pi_hat),
            'g_star': _json_real(self.g_star),
            'a': _json_real(self.a),
            'location': self.location,
            'G_at_zero': _json_real(self.G_at_zero),
            'verdict': self.verdict,
            'attained': self.attained,
            'iterations': self.iterations,
            'tolerance': self.tolerance,
            'representative': self.representative,
            'approach': vec(self.approach),
            'witness': vec(self.witness),
            'other_argmax': [vec(v) for v in self.other_argmax],
            'validity': self.validity,
            'notes': list(self.notes),
        }


class FeasibleRegion:
    """
    C ∩ C0_mu (∩ B_R): C0 rows selected by `mask` use the right-hand side (1 - mu)·r.
    """

    def __init__(self, C: ConstraintSet, natural: NaturalConstraints, mask: np.ndarray,
                 mu: float = 0.0, radius: Optional[float] = None, tol: float = 1e-9):
        self.C = C
        self.natural = natural
        self.radius = radius
        self.tol = tol
        self.G = natural.G
        self.r = natural.r.copy()
        if mask.any():
            self.r[mask] = (1.0 - mu) * self.r[mask]

    @property
    def dim(self) -> int:
        return self.C.dim

    def contains(self, y, tol: Optional[float] = None) -> bool:
        tol = self.tol if tol is None else tol
        if not self.C.contains(y, tol):
            return False
        if self.G.shape[0] and np.any(self.r - self.G @ y < -tol):
            return False
        if self.radius is not None and float(np.linalg.norm(y)) > self.radius * (1 + tol):
            return False
        return True

    def constraints(self) -> List[Dict]:
        out = list(self.C.scipy_constraints())
        if self.G.shape[0]:
            G, r = self.G, self.r
            out.append({'type': 'ineq', 'fun': lambda y: r - G @ y, 'jac': lambda y: -G})
        if self.radius is not None:
            r2 = self.radius ** 2
            out.append({'type': 'ineq', 'fun': lambda y: np.array([r2 - y @ y]), 'jac': lambda y: (-2.0 * y)[None, :]})
        return out

    def last_feasible(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Farthest feasible point of the segment [y, z] (y feasible), by bisection."""
        if self.contains(z):
            return z
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.contains(y + mid * (z - y)):
                lo = mid
            else:
                hi = mid
        return y + lo * (z - y)

    def interior_point(self) -> Optional[np.ndarray]:
        """
        A point strictly inside every constraint of the region, or None.

        The centroid of the members of C's candidate points is shrunk towards
        the origin until it lies in the region with positive slack.
        """
        points = [c for c in self.C.candidate_points() if self.C.contains(c)]
        if not points:
            return None
        center = np.mean(points, axis=0)
        if not np.any(center):
            return None
        try:
            constraints = self.constraints()
        except NotImplementedError:
            return None
        for k in range(40):
            cand = center * 0.5 ** k
            if not self.contains(cand):
                continue
            if all(np.all(np.atleast_1d(cons['fun'](cand)) > 0) for cons in constraints):
                return cand
        return None

    def model_maximizer(self, y: np.ndarray, grad: np.ndarray, Q: np.ndarray) -> np.ndarray:
        """
        argmax of grad·(z-y) - ½(z-y)ᵀQ(z-y) over the region.

        SLSQP starts at y; when that makes no progress (at a cone apex the
        linearized constraints are vacuous) it is restarted from an interior point.
        """
        newton = y + np.linalg.solve(Q, grad)
        if self.contains(newton):
            return newton

        def model(z):
            return float(grad @ (z - y)) - 0.5 * float((z - y) @ Q @ (z - y))

        best, best_val = y, 0.0
        starts = [y]
        interior = self.interior_point()
        if interior is not None:
            starts.append(interior)
        for start in starts:
            result = minimize(
                lambda z: -model(z),
                start,
                jac=lambda z: -grad + Q @ (z - y),
                constraints=self.constraints(),
                method="SLSQP",
                options={'ftol': 1e-15, 'maxiter': 300},
            )
            z = self.last_feasible(y, result.x) if start is y else self._feasible_end(start, result.x)
            if z is not None and model(z) > best_val:
                best, best_val = z, model(z)
            if best_val > 1e-12 * (1.0 + abs(float(grad @ grad))) and result.success:
                break
        return best

    def _feasible_end(self, start: np.ndarray, z: np.ndarray) -> Optional[np.ndarray]:
        if not self.contains(start):
            return None
        return self.last_feasible(start, z)

    def project(self, y: np.ndarray) -> np.ndarray:
        """Nearest point of the region to y (SLSQP)."""
        if self.contains(y):
            return y
        result = minimize(lambda z: 0.5 * float((z - y) @ (z - y)), y, jac=lambda z: z - y,
                          constraints=self.constraints(), method="SLSQP", options={'ftol': 1e-15, 'maxiter': 300})
        return result.x

    def barrier_active(self, y: np.ndarray, mask: np.ndarray, tol: float = 1e-9) -> bool:
        if not mask.any():
            return False
        slack = self.r - self.G @ y
        return bool(np.any(slack[mask] <= tol * np.maximum(1.0, self.r[mask])))


def barrier_mask(natural: NaturalConstraints, p: float) -> np.ndarray:
    if p < 0:
        return natural.r > 0
    return natural.atom_rows


def safe_value(obj: GObjective, y: np.ndarray) -> float:
    try:
        return obj.value(y).value
    except DomainError:
        return -math.inf


def _probe_direction(obj: GObjective, region: FeasibleRegion, y: np.ndarray) -> Optional[np.ndarray]:
    """Best feasible improving point near y along axis and candidate directions (no gradient)."""
    base = safe_value(obj, y)
    directions = [s * e for e in np.eye(region.dim) for s in (1.0, -1.0)]
    directions += [c - y for c in region.C.candidate_points() if np.linalg.norm(c - y) > 0]
    best, best_val = None, base
    for direction in directions:
        for t in (1e-1, 1e-2, 1e-3):
            cand = y + t * direction
            if region.contains(cand):
                val = safe_value(obj, cand)
                if val > best_val:
                    best, best_val = cand, val
                break
    return best


def ascend(obj: GObjective, region: FeasibleRegion, y0: np.ndarray, max_iter: int,
           tol: float) -> Tuple[np.ndarray, float, int, float]:
    """
    Projected-Newton ascent of g over a convex region from a feasible y0.

    Returns:
        (y, g(y), iterations, last Newton decrement)
    """
    y = np.asarray(y0, dtype=float).copy()
    val = safe_value(obj, y)
    decrement = math.inf
    d = region.dim
    it = 0
    for it in range(1, max_iter + 1):
        try:
            grad = obj.gradient(y)
        except TailDivergence:
            probe = _probe_direction(obj, region, y)
            if probe is None:
                break
            y, val = probe, safe_value(obj, probe)
            continue
        H = obj.hessian(y)
        rho = 1e-12 * max(1.0, float(np.max(np.abs(H))))
        Q = -H + rho * np.eye(d)
        z = region.model_maximizer(y, grad, Q)
        direction = z - y
        decrement = float(grad @ direction)
        if np.linalg.norm(direction) <= 1e-15 * (1.0 + np.linalg.norm(y)) or decrement <= 0:
            decrement = max(decrement, 0.0)
            break
        slack = 1e-14 * (1.0 + abs(val))
        t, accepted = 1.0, False
        while t >= 1e-12:
            cand = y + t * direction
            if region.contains(cand):
                cand_val = safe_value(obj, cand)
                if cand_val >= val + 1e-4 * t * decrement - slack:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
        y, val = cand, cand_val
        logger.debug(f"ascent iter {it}: g = {val:.15g}, decrement = {decrement:.3e}, step = {t:.3g}")
        if decrement <= tol * (1.0 + abs(val)):
            break
    return y, val, it, decrement


def solve_on_region(obj: GObjective, C: ConstraintSet, natural: NaturalConstraints, settings: OptimizerSettings,
                    tol: float, radius: Optional[float] = None,
                    y0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, float, int, float, FeasibleRegion]:
    """Barrier continuation mu_k = 2^-k around `ascend`."""
    mask = barrier_mask(natural, obj.p)
    levels = [0.0] if not mask.any() else [2.0 ** (-k) for k in range(1, settings.barrier_levels + 1)]
    y = np.zeros(C.dim) if y0 is None else np.asarray(y0, dtype=float)
    total_iter, prev, val, decrement = 0, None, -math.inf, math.inf
    region = None
    for mu in levels:
        region = FeasibleRegion(C, natural, mask, mu, radius)
        if not region.contains(y):
            origin = np.zeros(C.dim)
            y = region.last_feasible(origin, y) if region.contains(origin) else region.project(y)
        y, val, its, decrement = ascend(obj, region, y, settings.max_iter, tol)
        total_iter += its
        if not region.barrier_active(y, mask):
            break
        if prev is not None and abs(val - prev) <= tol * (1.0 + abs(val)):
            break
        prev = val
    return y, val, total_iter, decrement, region


def first_order_gap(obj: GObjective, region: FeasibleRegion, y: np.ndarray) -> Optional[float]:
    """
    max over z in the region of grad·(z - y) - ½|z - y|², the gain of a projected-gradient step.

    Zero exactly at maximizers of the concave g over the region; None when the
    gradient cannot be evaluated at y.
    """
    try:
        grad = obj.gradient(y)
    except (DomainError, TailDivergence):
        return None
    z = region.model_maximizer(y, grad, np.eye(region.dim))
    step = z - y
    return max(float(grad @ step) - 0.5 * float(step @ step), 0.0)


def minimal_norm_representative(y: np.ndarray, basis: np.ndarray, region: FeasibleRegion) -> Tuple[np.ndarray, str]:
    """Minimal-norm element of (y + N) ∩ region; falls back to the N-perp projection."""
    if basis.shape[1] == 0:
        return y, "minimal_norm"
    constraints = []
    for cons in region.constraints():
        fun, jac = cons['fun'], cons['jac']
        constraints.append({
            'type': 'ineq',
            'fun': (lambda f: lambda beta: f(y + basis @ beta))(fun),
            'jac': (lambda j: lambda beta: np.atleast_2d(j(y + basis @ beta)) @ basis)(jac),
        })
    result = minimize(
        lambda beta: 0.5 * float(np.sum((y + basis @ beta) ** 2)),
        np.zeros(basis.shape[1]),
        jac=lambda beta: basis.T @ (y + basis @ beta),
        constraints=constraints,
        method="SLSQP",
        options={'ftol': 1e-15, 'maxiter': 300},
    )
    candidate = y + basis @ result.x
    if result.success and region.contains(candidate):
        return candidate, "minimal_norm"
    logger.warning("Minimal-norm representative not found; reporting the N-perp projection")
    return project_onto_N_perp(y, basis), "projection"


def classify_location(y: np.ndarray, C: ConstraintSet, natural: NaturalConstraints, tol: float = 1e-7) -> str:
    if natural.on_boundary(y, tol):
        return "C0-boundary"
    if C.is_convex:
        try:
            for cons in C.scipy_constraints():
                if np.any(np.atleast_1d(cons['fun'](y)) <= tol * (1.0 + np.linalg.norm(y))):
                    return "C-boundary"
            return "interior"
        except NotImplementedError:
            pass
    step = 1e-6 * (1.0 + np.linalg.norm(y))
    for e in np.eye(C.dim):
        if not (C.contains(y + step * e, 0.0) and C.contains(y - step * e, 0.0)):
            return "C-boundary"
    return "interior"


def classify_finiteness(triplet: LevyTriplet, C: ConstraintSet, p: float,
                        geometry: Optional[ConstraintGeometry] = None) -> str:
    """
    'finite', 'infinite' or 'undecided' for the value u(x0).

    p < 0 is always finite. For p in (0, 1) the model is transformed so that
    tradable assets are positive and the p-th moment is tested there.
    """
    if p < 0:
        return "finite"
    geometry = geometry or analyze_geometry(triplet, C)
    if geometry.nuip.status == "undecidable":
        return "undecided"
    if geometry.nuip.status == VIOLATED:
        return "infinite"
    transform = build_transform(triplet, C)
    transformed = transform_triplet(triplet, transform.Lambda)
    try:
        finite = pth_moment_finite(transformed, p)
    except UnboundedSupportWithoutTailModel as e:
        logger.warning(f"Finiteness undecided: {e}")
        return "undecided"
    return "finite" if finite else "infinite"


def _nuip_solution(p: float, geometry: ConstraintGeometry, strict: bool) -> PortfolioSolution:
    witness = geometry.nuip.witness
    if strict:
        raise NuipViolated(f"NUIP fails: {geometry.nuip.reason}", witness=witness)
    return PortfolioSolution(p=p, pi_hat=None, g_star=math.nan, verdict=NUIP_VIOLATED, attained=False,
                             witness=witness, notes=[geometry.nuip.reason])


def maximize_convex(
    triplet: LevyTriplet,
    C: ConstraintSet,
    p: float,
    tolerances: Optional[Tolerances] = None,
    settings: Optional[OptimizerSettings] = None,
    geometry: Optional[ConstraintGeometry] = None,
    strict: bool = False,
) -> PortfolioSolution:
    """
    Maximize g over C ∩ C0 for convex C.

    Args:
        triplet: Lévy triplet
        C: Convex constraint set
        p: Utility exponent
        tolerances: Numerical tolerances
        settings: Optimizer settings
        geometry: Precomputed geometry (computed when None)
        strict: Raise NuipViolated instead of returning a verdict

    Returns:
        PortfolioSolution
    """
    tolerances = tolerances or Tolerances()
    settings = settings or OptimizerSettings()
    geometry = geometry or analyze_geometry(triplet, C, tolerances.kernel)

    if geometry.nuip.status == VIOLATED:
        return _nuip_solution(p, geometry, strict)
    finiteness = classify_finiteness(triplet, C, p, geometry)
    if finiteness == "infinite":
        logger.info("Value is infinite: p-th moment fails in the transformed model")
        return PortfolioSolution(p=p, pi_hat=None, g_star=math.inf, verdict=INFINITE_VALUE, attained=False,
                                 notes=["p-th moment condition fails after transformation"])

    obj = GObjective(triplet, p, tolerances)
    natural = geometry.natural
    notes: List[str] = []
    if finiteness == "undecided":
        notes.append("finiteness undecided")
    if geometry.nuip.status == "undecidable":
        notes.append("NUIP undecidable")

    if geometry.projection_closed == "true":
        y, val, its, dec, region = solve_on_region(obj, C, natural, settings, tolerances.optimizer)
    else:
        return _radius_continuation(obj, C, geometry, settings, tolerances, notes)

    return _finish(obj, y, val, its, dec, C, geometry, region, notes)


def _finish(obj: GObjective, y: np.ndarray, val: float, its: int, dec: float, C: ConstraintSet,
            geometry: ConstraintGeometry, region: FeasibleRegion, notes: List[str]) -> PortfolioSolution:
    pi_hat, representative = minimal_norm_representative(y, geometry.N_basis, region)
    g_star = safe_value(obj, pi_hat)
    if not math.isfinite(g_star) or abs(g_star - val) > 1e-9 * (1.0 + abs(val)):
        pi_hat, g_star = y, val
    location = classify_location(pi_hat, C, geometry.natural)
    solution = PortfolioSolution(
        p=obj.p,
        pi_hat=pi_hat,
        g_star=g_star,
        location=location,
        G_at_zero=obj.directional(np.zeros_like(pi_hat), pi_hat),
        iterations=its,
        tolerance=dec,
        representative=representative,
        notes=notes,
    )
    logger.info(f"Solution: pi_hat = {np.round(pi_hat, 8).tolist()}, g* = {g_star:.12g}, location = {location}")
    return solution


def _radius_continuation(obj: GObjective, C: ConstraintSet, geometry: ConstraintGeometry,
                         settings: OptimizerSettings, tolerances: Tolerances, notes: List[str]) -> PortfolioSolution:
    """
    Solve on C ∩ B_R for R = first_radius·10^k until the maximizer leaves the sphere or values plateau.

    An exit inside the ball counts as attained only when the first-order gap
    there is below stationarity_tol; otherwise the region is solved again from
    an interior point and, failing that, the radius keeps growing.
    """
    radius = settings.first_radius
    y = np.zeros(C.dim)
    previous = None
    total_iter = 0
    while True:
        y, val, its, dec, region = solve_on_region(obj, C, geometry.natural, settings, tolerances.optimizer,
                                                   radius=radius, y0=y)
        total_iter += its
        on_sphere = float(np.linalg.norm(y)) >= (1.0 - 1e-6) * radius
        logger.debug(f"radius {radius:.0e}: g = {val:.15g}, |y| = {np.linalg.norm(y):.6g}")
        if not on_sphere:
            gap = first_order_gap(obj, region, y)
            if gap is not None and gap > settings.stationarity_tol * (1.0 + abs(val)):
                interior = region.interior_point()
                logger.warning(f"Ascent stopped at |y| = {np.linalg.norm(y):.3g} with first-order gap {gap:.3e}; "
                               f"restarting from an interior point")
                if interior is not None:
                    y, val, its, dec, region = solve_on_region(obj, C, geometry.natural, settings,
                                                               tolerances.optimizer, radius=radius, y0=interior)
                    total_iter += its
                    on_sphere = float(np.linalg.norm(y)) >= (1.0 - 1e-6) * radius
                    gap = None if on_sphere else first_order_gap(obj, region, y)
            if not on_sphere:
                if gap is None:
                    notes = notes + ["first-order check unavailable at the reported maximizer"]
                    return _finish(obj, y, val, total_iter, dec, C, geometry, region, notes)
                if gap <= settings.stationarity_tol * (1.0 + abs(val)):
                    return _finish(obj, y, val, total_iter, dec, C, geometry, region, notes)
        plateau = previous is not None and abs(val - previous) <= settings.plateau_tol * (1.0 + abs(val))
        if plateau or radius * 10.0 > settings.divergence_radius:
            break
        previous = val
        radius *= 10.0

    message = (f"maximizer not attained: iterates reach |y| = {np.linalg.norm(y):.3g} while g plateaus at "
               f"{val:.12g}; projection of C ∩ C0 onto N-perp may not be closed")
    warnings.warn(message, ProjectionNotClosed)
    logger.warning(message)
    approach = project_onto_N_perp(y, geometry.N_basis)
    return PortfolioSolution(
        p=obj.p,
        pi_hat=None,
        g_star=val,
        location="none",
        G_at_zero=math.nan,
        attained=False,
        iterations=total_iter,
        tolerance=dec,
        representative="none",
        approach=approach,
        notes=notes + [message],
    )
