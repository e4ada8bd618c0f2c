"""
Lévy market model: triplet (b, c, F) with the cutoff h(x) = x·1{|x| <= 1}.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from market.densities import DensityPart

logger = logging.getLogger(__name__)

CUTOFF_RADIUS = 1.0


def cutoff(x: np.ndarray) -> np.ndarray:
    """h(x) = x if |x| <= 1 else 0 (Euclidean norm, row-wise for 2-d input)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x if np.linalg.norm(x) <= CUTOFF_RADIUS else np.zeros_like(x)
    inside = np.linalg.norm(x, axis=-1) <= CUTOFF_RADIUS
    return x * inside[..., None]


@dataclass(frozen=True, eq=False)
class Atom:
    """Point mass lam at jump x."""

    x: np.ndarray
    lam: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float)).copy()
        x.setflags(write=False)
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'lam', float(self.lam))

    def to_dict(self) -> Dict:
        return {'x': [float(v) for v in self.x], 'lambda': self.lam}


@dataclass(frozen=True, eq=False)
class SupportHull:
    """
    Conservative description of supp(F).

    Attributes:
        points: Finite extreme points (atoms and finite density endpoints)
        strict: True where the point carries positive mass (atoms)
        rays: Unbounded directions of density supports
    """

    points: np.ndarray
    strict: np.ndarray
    rays: np.ndarray


class JumpMeasure:
    """Lévy measure as finite atoms plus ray densities."""

    def __init__(self, atoms: Sequence[Atom] = (), densities: Sequence[DensityPart] = ()):
        self.atoms = tuple(atoms)
        self.densities = tuple(densities)

    @property
    def is_empty(self) -> bool:
        return not self.atoms and not self.densities

    def atom_matrix(self, dim: int) -> np.ndarray:
        if not self.atoms:
            return np.zeros((0, dim))
        return np.vstack([a.x for a in self.atoms])

    def atom_weights(self) -> np.ndarray:
        return np.array([a.lam for a in self.atoms], dtype=float)

    def support_vectors(self, dim: int) -> np.ndarray:
        """Vectors spanning the linear hull of supp(F)."""
        rows = [a.x for a in self.atoms] + [part.direction for part in self.densities]
        if not rows:
            return np.zeros((0, dim))
        return np.vstack(rows)

    def support_hull(self, dim: int) -> SupportHull:
        points, strict, rays = [], [], []
        for atom in self.atoms:
            points.append(atom.x)
            strict.append(True)
        for part in self.densities:
            for vec, is_ray in part.endpoints():
                if is_ray:
                    rays.append(vec)
                else:
                    points.append(vec)
                    strict.append(False)
        return SupportHull(
            points=np.vstack(points) if points else np.zeros((0, dim)),
            strict=np.array(strict, dtype=bool),
            rays=np.vstack(rays) if rays else np.zeros((0, dim)),
        )

    def mapped(self, matrix: np.ndarray, tol: float = 1e-12) -> "JumpMeasure":
        """Image measure under x -> matrix·x; jumps mapped to 0 are dropped."""
        atoms = []
        for atom in self.atoms:
            y = matrix @ atom.x
            if np.linalg.norm(y) > tol:
                atoms.append(Atom(y, atom.lam))
        densities = []
        for part in self.densities:
            v = matrix @ part.direction
            if np.linalg.norm(v) > tol:
                densities.append(part.with_direction(v))
        return JumpMeasure(atoms, densities)

    def to_dict(self) -> Dict:
        return {
            'atoms': [a.to_dict() for a in self.atoms],
            'densities': [part.to_dict() for part in self.densities],
        }


@dataclass(frozen=True, eq=False)
class LevyTriplet:
    """Drift b (relative to h), covariance c and jump measure of the return process R."""

    b: np.ndarray
    c: np.ndarray
    jumps: JumpMeasure = field(default_factory=JumpMeasure)

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).copy()
        c = np.atleast_2d(np.asarray(self.c, dtype=float)).copy()
        b.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'c', c)

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def to_dict(self) -> Dict:
        return {
            'b': [float(v) for v in self.b],
            'c': [[float(v) for v in row] for row in self.c],
            **self.jumps.to_dict(),
        }


@dataclass
class ValidationReport:
    """Structural violations of a triplet; empty means valid."""

    violations: List[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict:
        return {'valid': self.valid, 'violations': list(self.violations)}


def validate_model(triplet: LevyTriplet, tol_psd: float = 1e-10) -> ValidationReport:
    """
    Check the structural conditions of a Lévy triplet.

    Never raises; every failed condition becomes one entry of the report.

    Args:
        triplet: Model to check
        tol_psd: Tolerance on negative covariance eigenvalues

    Returns:
        ValidationReport listing the violations
    """
    report = ValidationReport()
    d = triplet.dim

    if triplet.c.shape != (d, d):
        report.violations.append(f"covariance shape {triplet.c.shape} does not match drift dimension {d}")
    else:
        scale = max(1.0, float(np.max(np.abs(triplet.c))))
        if np.max(np.abs(triplet.c - triplet.c.T)) > tol_psd * scale:
            report.violations.append("covariance not symmetric")
        eigenvalues = np.linalg.eigvalsh(0.5 * (triplet.c + triplet.c.T))
        if eigenvalues.min() < -tol_psd:
            report.violations.append(
                f"covariance not positive semidefinite (min eigenvalue {eigenvalues.min():.3e})"
            )

    if not np.all(np.isfinite(triplet.b)):
        report.violations.append("drift has non-finite entries")

    for k, atom in enumerate(triplet.jumps.atoms):
        if atom.x.shape != (d,):
            report.violations.append(f"atom {k} has dimension {atom.x.shape[0]}, expected {d}")
            continue
        if not np.all(np.isfinite(atom.x)):
            report.violations.append(f"atom {k} has non-finite location")
        elif np.linalg.norm(atom.x) == 0.0:
            report.violations.append("mass at origin")
        if not atom.lam > 0:
            report.violations.append(f"atom {k} has nonpositive weight {atom.lam}")

    for k, part in enumerate(triplet.jumps.densities):
        if part.dim != d:
            report.violations.append(f"density {k} has dimension {part.dim}, expected {d}")
            continue
        if part.norm_v == 0.0:
            report.violations.append(f"density {k} has zero direction")
            continue
        if not part.bounded and part.tail is None:
            report.violations.append(f"density {k}: unbounded support without tail model")
            continue
        if not _small_jump_integrable(part):
            report.violations.append(f"density {k}: jump part not integrable against 1 ∧ |x|²")

    if report.valid:
        logger.debug(f"Triplet of dimension {d} passed validation")
    else:
        logger.debug(f"Triplet validation found {len(report.violations)} violation(s)")
    return report


def _small_jump_integrable(part: DensityPart) -> bool:
    """∫ 1 ∧ |s v|² f(s) ds < ∞; tails beyond the cutoff are finite by annotation."""
    edge = 1.0 / part.norm_v
    nv2 = part.norm_v ** 2
    value, err, warned = part.integrate(
        lambda s: min(1.0, s * s * nv2), breaks=(-edge, edge), lo=-2.0 * edge, hi=2.0 * edge
    )
    if not math.isfinite(value):
        return False
    if warned and err > 1e-6 * max(1.0, abs(value)):
        return False
    if part.bounded:
        far_lo, far_hi = part.mass(hi=-2.0 * edge), part.mass(lo=2.0 * edge)
        return math.isfinite(far_lo) and math.isfinite(far_hi)
    return True


def pth_moment_finite(triplet: LevyTriplet, p: float) -> bool:
    """
    True iff ∫_{|x|>1} |x|^p F(dx) < ∞.

    Atoms contribute finitely. A density part reaching infinity is decided by
    its tail annotation; bounded parts beyond the cutoff are finite.

    Raises:
        UnboundedSupportWithoutTailModel: unbounded density without annotation
    """
    for part in triplet.jumps.densities:
        if part.bounded:
            continue
        tail = part.require_tail()
        if not tail.moment_finite(p):
            logger.debug(f"{part.kind} density: {tail.kind}({tail.rate}) tail has infinite {p}-th moment")
            return False
    return True


def asset_jump_floor(triplet: LevyTriplet, j: int) -> float:
    """Infimum of x^j over supp(F); +inf without jumps, -inf on unbounded negative support."""
    floor = math.inf
    for atom in triplet.jumps.atoms:
        floor = min(floor, float(atom.x[j]))
    for part in triplet.jumps.densities:
        vj = float(part.direction[j])
        if vj == 0.0:
            floor = min(floor, 0.0)
            continue
        # x^j = s·v_j is monotone in s, extreme at an endpoint
        for s in (part.lo, part.hi):
            floor = min(floor, s * vj if math.isfinite(s) else (-math.inf if s * vj < 0 else math.inf))
    return floor


def total_activity(triplet: LevyTriplet) -> float:
    """Total mass F(R^d); inf for infinite-activity parts."""
    total = float(triplet.jumps.atom_weights().sum())
    for part in triplet.jumps.densities:
        total += part.mass()
        if math.isinf(total):
            return math.inf
    return total


def part_cutoff_moment(part: DensityPart, epsrel: float = 1e-9, epsabs: float = 1e-12) -> float:
    """∫_{|s v| <= 1} s f(s) ds; inf when ∫|s| f diverges near zero."""
    if part.kind == "cgmy" and part.contains_zero() and part.Y >= 1:
        return math.inf
    edge = 1.0 / part.norm_v
    absolute, err, warned = part.integrate(abs, breaks=(0.0,), epsrel=epsrel, epsabs=epsabs, lo=-edge, hi=edge)
    if not math.isfinite(absolute) or (warned and err > 1e-6 * max(1.0, absolute)):
        return math.inf
    value, _, _ = part.integrate(lambda s: s, breaks=(0.0,), epsrel=epsrel, epsabs=epsabs, lo=-edge, hi=edge)
    return value


def integrate_cutoff(triplet: LevyTriplet, epsrel: float = 1e-9, epsabs: float = 1e-12) -> np.ndarray:
    """
    ∫ h(x) F(dx) as a vector.

    Components touched by a part whose first absolute moment diverges near
    zero are returned as inf.
    """
    total = np.zeros(triplet.dim)
    for atom in triplet.jumps.atoms:
        total += cutoff(atom.x) * atom.lam
    for part in triplet.jumps.densities:
        moment = part_cutoff_moment(part, epsrel, epsabs)
        if math.isinf(moment):
            total = np.where(part.direction != 0, np.inf, total)
        else:
            total = total + moment * part.direction
    return total


def require_tails(triplet: LevyTriplet) -> None:
    """Raise if some unbounded density lacks a tail annotation."""
    for part in triplet.jumps.densities:
        part.require_tail()
