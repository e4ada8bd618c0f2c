"""
The concave objective g(y) and its directional derivative G(y_target, y).

g(y) = y·b + (p-1)/2 y·c·y + ∫ {((1+y·x)^p - 1)/p - y·h(x)} F(dx)

Atoms are summed exactly; each ray density is integrated with adaptive
Gauss-Kronrod quadrature split at the cutoff kink |x| = 1 and at the point
where 1 + y·x vanishes. Infinite values are returned explicitly: -inf for
p < 0 at an atom with 1 + y·x = 0, +inf for p in (0, 1) when the tail
annotation says the integral diverges.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from geometry.natural import NaturalConstraints, natural_constraints
from market.densities import DensityPart, check_quadrature
from market.levy import LevyTriplet, cutoff
from market.problem import Tolerances
from utils.errors import DomainError, TailDivergence

logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-12
CURVATURE_FLOOR = 1e-8
HESSIAN_TRUNCATION = 1e3


@dataclass
class GValue:
    """Extended-real objective value with its quadrature error estimate."""

    value: float
    error: float = 0.0
    boundary_atoms: List[int] = field(default_factory=list)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def to_dict(self):
        return {'value': _json_real(self.value), 'error': self.error, 'boundary_atoms': list(self.boundary_atoms)}


def _json_real(x: float):
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def _infinite_ends(part: DensityPart) -> List[float]:
    ends = []
    if math.isinf(part.hi):
        ends.append(1.0)
    if math.isinf(part.lo):
        ends.append(-1.0)
    return ends


def _touching_endpoint(part: DensityPart, w: float) -> Optional[float]:
    """Finite support end s_e with 1 + s_e·w = 0, if any."""
    for s in (part.lo, part.hi):
        if math.isfinite(s) and abs(1.0 + s * w) <= 1e-12:
            return s
    return None


class GObjective:
    """
    Evaluator of g, G, the gradient and the Hessian for one (triplet, p).

    Args:
        triplet: Lévy triplet
        p: Utility exponent
        tolerances: Quadrature tolerances
    """

    def __init__(self, triplet: LevyTriplet, p: float, tolerances: Optional[Tolerances] = None):
        if p == 0 or not p < 1:
            raise ValueError(f"p must lie in (-inf, 0) or (0, 1), got {p}")
        self.triplet = triplet
        self.p = float(p)
        self.tol = tolerances or Tolerances()
        self.natural: NaturalConstraints = natural_constraints(triplet)
        self._atoms = triplet.jumps.atom_matrix(triplet.dim)
        self._weights = triplet.jumps.atom_weights()
        self._cut_atoms = cutoff(self._atoms) if self._atoms.shape[0] else self._atoms

    # -- helpers -------------------------------------------------------------

    def _check_domain(self, y: np.ndarray) -> None:
        if not self.natural.contains(y, self.tol.membership):
            raise DomainError(f"y = {np.round(y, 8).tolist()} is outside the natural constraints C0")

    def _integrate(self, part: DensityPart, func, w: float, what: str):
        edge = 1.0 / part.norm_v
        breaks = [-edge, edge]
        if w != 0.0:
            breaks.append(-1.0 / w)
        value, err, warned = part.integrate(func, breaks, self.tol.quad_rel, self.tol.quad_abs)
        check_quadrature(value, err, warned, self.tol.quad_fail, what)
        return value, err

    # -- g -------------------------------------------------------------------

    def value(self, y) -> GValue:
        """g(y) for y in C0."""
        y = np.asarray(y, dtype=float)
        self._check_domain(y)
        p = self.p
        b, c = self.triplet.b, self.triplet.c
        total = float(y @ b) + 0.5 * (p - 1.0) * float(y @ c @ y)
        error = 0.0
        boundary: List[int] = []

        for k in range(self._atoms.shape[0]):
            u = float(self._atoms[k] @ y)
            if 1.0 + u <= BOUNDARY_TOL:
                boundary.append(k)
                if p < 0:
                    return GValue(-math.inf, 0.0, boundary)
                term = -1.0 / p
            else:
                term = math.expm1(p * math.log1p(u)) / p
            total += self._weights[k] * (term - float(self._cut_atoms[k] @ y))

        for part in self.triplet.jumps.densities:
            w = float(part.direction @ y)
            if w == 0.0:
                continue
            if part.lo < -1.0 / w < part.hi:
                raise DomainError(f"1 + y·x changes sign inside the {part.kind} density support")
            if p > 0:
                for end in _infinite_ends(part):
                    if end * w > 0 and not part.require_tail().moment_finite(p):
                        return GValue(math.inf, 0.0, boundary)
            touch = _touching_endpoint(part, w)
            if touch is not None and p <= -1.0 and float(part.pdf(touch)) > 0:
                return GValue(-math.inf, 0.0, boundary)
            edge = 1.0 / part.norm_v

            def integrand(s, w=w, edge=edge):
                u = s * w
                if 1.0 + u <= 0.0:
                    main = -1.0 / p if p > 0 else -math.inf
                else:
                    main = math.expm1(p * math.log1p(u)) / p
                return main - (u if abs(s) <= edge else 0.0)

            value, err = self._integrate(part, integrand, w, f"g at {np.round(y, 6).tolist()}")
            total += value
            error += err
        return GValue(total, error, boundary)

    # -- G -------------------------------------------------------------------

    def directional(self, y_target, y) -> float:
        """G(y_target, y) = directional derivative of g at y toward y_target."""
        y_target = np.asarray(y_target, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check_domain(y)
        p = self.p
        d = y_target - y
        total = float(d @ (self.triplet.b + (p - 1.0) * (self.triplet.c @ y)))
        infinite = 0.0

        for k in range(self._atoms.shape[0]):
            x = self._atoms[k]
            z = 1.0 + float(x @ y)
            dx = float(d @ x)
            if z <= BOUNDARY_TOL:
                if dx > 0:
                    infinite = math.inf
                elif dx < 0:
                    return -math.inf
                total -= self._weights[k] * float(self._cut_atoms[k] @ d)
                continue
            total += self._weights[k] * (dx * z ** (p - 1.0) - float(self._cut_atoms[k] @ d))

        for part in self.triplet.jumps.densities:
            w = float(part.direction @ y)
            wd = float(part.direction @ d)
            if wd == 0.0:
                continue
            sign = self._tail_sign(part, w, wd)
            if sign:
                return sign * math.inf
            touch = _touching_endpoint(part, w) if w != 0.0 else None
            if touch is not None and p <= 0 and float(part.pdf(touch)) > 0 and touch * wd != 0:
                infinite = math.copysign(math.inf, touch * wd)
                continue
            edge = 1.0 / part.norm_v

            def integrand(s, w=w, wd=wd, edge=edge):
                base = 1.0 + s * w
                main = s * wd * base ** (p - 1.0) if base > 0 else 0.0
                return main - (s * wd if abs(s) <= edge else 0.0)

            value, _ = self._integrate(part, integrand, w, f"G at {np.round(y, 6).tolist()}")
            total += value
        return infinite if infinite else total

    def _tail_sign(self, part: DensityPart, w: float, wd: float) -> float:
        """Sign of a divergent tail of s·wd·(1+s·w)^(p-1), or 0 when it converges."""
        order = self.p if w != 0.0 else 1.0
        for end in _infinite_ends(part):
            if not part.require_tail().moment_finite(order):
                return math.copysign(1.0, end * wd)
        return 0.0

    # -- derivatives -----------------------------------------------------------

    def gradient(self, y) -> np.ndarray:
        """∇g(y); atoms at the boundary use a floor on 1 + y·x."""
        y = np.asarray(y, dtype=float)
        p = self.p
        grad = self.triplet.b + (p - 1.0) * (self.triplet.c @ y)
        if self._atoms.shape[0]:
            z = np.maximum(1.0 + self._atoms @ y, CURVATURE_FLOOR)
            inside = np.linalg.norm(self._atoms, axis=1) <= 1.0
            grad = grad + (self._weights * (z ** (p - 1.0) - inside)) @ self._atoms
        for part in self.triplet.jumps.densities:
            w = float(part.direction @ y)
            if self._tail_sign(part, w, 1.0):
                raise TailDivergence(f"gradient of g diverges along the {part.kind} density tail")
            edge = 1.0 / part.norm_v

            def integrand(s, w=w, edge=edge):
                base = max(1.0 + s * w, CURVATURE_FLOOR)
                return s * (base ** (p - 1.0) - (1.0 if abs(s) <= edge else 0.0))

            value, _ = self._integrate(part, integrand, w, "gradient of g")
            grad = grad + value * part.direction
        return grad

    def hessian(self, y) -> np.ndarray:
        """
        ∇²g(y) = (p-1)[c + ∫ x xᵀ (1+y·x)^(p-2) F(dx)].

        Heavy tails are truncated at |s| = 1e3; the matrix only shapes the
        Newton model.
        """
        y = np.asarray(y, dtype=float)
        p = self.p
        curvature = np.array(self.triplet.c, dtype=float)
        if self._atoms.shape[0]:
            z = np.maximum(1.0 + self._atoms @ y, CURVATURE_FLOOR)
            curvature = curvature + (self._atoms.T * (self._weights * z ** (p - 2.0))) @ self._atoms
        for part in self.triplet.jumps.densities:
            w = float(part.direction @ y)

            def integrand(s, w=w):
                base = max(1.0 + s * w, CURVATURE_FLOOR)
                return s * s * base ** (p - 2.0)

            lo, hi = max(part.lo, -HESSIAN_TRUNCATION), min(part.hi, HESSIAN_TRUNCATION)
            value, _, _ = part.integrate(integrand, [-1.0 / w] if w else [], self.tol.quad_rel,
                                         self.tol.quad_abs, lo=lo, hi=hi)
            if math.isfinite(value):
                curvature = curvature + value * np.outer(part.direction, part.direction)
        return (p - 1.0) * curvature

    def on_segment(self, y, n: int) -> List[GValue]:
        """g(λ y) for λ on an n-point grid of [0, 1]."""
        y = np.asarray(y, dtype=float)
        self._check_domain(y)
        out = []
        for lam in np.linspace(0.0, 1.0, n):
            try:
                out.append(self.value(lam * y))
            except DomainError:
                out.append(GValue(-math.inf))
        return out


def eval_g(y, triplet: LevyTriplet, p: float, tolerances: Optional[Tolerances] = None) -> GValue:
    return GObjective(triplet, p, tolerances).value(y)


def eval_G(y_target, y, triplet: LevyTriplet, p: float, tolerances: Optional[Tolerances] = None) -> float:
    return GObjective(triplet, p, tolerances).directional(y_target, y)


def eval_g_on_segment(y, triplet: LevyTriplet, p: float, n: int,
                      tolerances: Optional[Tolerances] = None) -> List[GValue]:
    return GObjective(triplet, p, tolerances).on_segment(y, n)


def eval_gradient(y, triplet: LevyTriplet, p: float, tolerances: Optional[Tolerances] = None) -> np.ndarray:
    return GObjective(triplet, p, tolerances).gradient(y)


def eval_hessian(y, triplet: LevyTriplet, p: float, tolerances: Optional[Tolerances] = None) -> np.ndarray:
    return GObjective(triplet, p, tolerances).hessian(y)


def values_array(values: Sequence[GValue]) -> np.ndarray:
    return np.array([v.value for v in values], dtype=float)
