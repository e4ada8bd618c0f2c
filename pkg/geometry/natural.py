"""
Natural constraints C0, strict admissibility C0'* and null investments N.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, List

import numpy as np
from scipy.linalg import null_space as kernel
from scipy.optimize import linprog

from market.levy import LevyTriplet

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NaturalConstraints:
    """
    C0 = {y : G y <= r} built from the support of F.

    Row kinds: 'atom' (-x_k·y <= 1, strict in C0'*), 'endpoint' (finite end
    s·v of a density support) and 'ray' (unbounded direction u, -u·y <= 0).
    """

    G: np.ndarray
    r: np.ndarray
    kinds: tuple

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    @property
    def atom_rows(self) -> np.ndarray:
        return np.array([k == 'atom' for k in self.kinds], dtype=bool)

    @property
    def is_everything(self) -> bool:
        return self.G.shape[0] == 0

    def slack(self, y) -> np.ndarray:
        """r - G y per row; 1 + y·x for atom and endpoint rows."""
        return self.r - self.G @ np.asarray(y, dtype=float)

    def contains(self, y, tol: float = 1e-9) -> bool:
        if self.is_everything:
            return True
        return bool(np.all(self.slack(y) >= -tol))

    def strictly_admissible(self, y, tol: float = 1e-9) -> bool:
        """Membership in C0'*: strict at atoms, closed on density supports."""
        if not self.contains(y, tol):
            return False
        atoms = self.atom_rows
        return bool(np.all(self.slack(y)[atoms] > tol))

    def on_boundary(self, y, tol: float = 1e-7) -> bool:
        if self.is_everything:
            return False
        slack = self.slack(y)
        finite = self.r > 0
        return bool(np.any(slack[finite] <= tol) or np.any(np.abs(slack[~finite]) <= tol))

    @property
    def is_compact(self) -> bool:
        if self.is_everything:
            return False
        d = self.dim
        for i, sign in itertools.product(range(d), (1.0, -1.0)):
            objective = np.zeros(d)
            objective[i] = -sign
            result = linprog(objective, A_ub=self.G, b_ub=np.zeros(self.G.shape[0]),
                             bounds=[(-1.0, 1.0)] * d, method="highs")
            if result.status == 0 and -result.fun > 1e-9:
                return False
        return True

    def atoms_can_bind(self, tol: float = 1e-9) -> bool:
        """True if some atom row is active somewhere on C0 (then C0'* != C0)."""
        d = self.dim
        for row in np.flatnonzero(self.atom_rows):
            result = linprog(-self.G[row], A_ub=self.G, b_ub=self.r,
                             bounds=[(None, None)] * d, method="highs")
            if result.status == 3 or (result.status == 0 and -result.fun >= self.r[row] - tol):
                return True
        return False

    def to_dict(self) -> Dict:
        return {
            'halfspaces': [
                {'row': [float(v) for v in g], 'rhs': float(rhs), 'kind': kind}
                for g, rhs, kind in zip(self.G, self.r, self.kinds)
            ],
            'compact': self.is_compact,
        }


def natural_constraints(triplet: LevyTriplet) -> NaturalConstraints:
    """
    Halfspace description of C0 from the support hull of F.

    Atoms give -x·y <= 1, finite density endpoints s·v give -s·v·y <= 1 and
    unbounded directions u give u·y >= 0.
    """
    d = triplet.dim
    hull = triplet.jumps.support_hull(d)
    rows: List[np.ndarray] = []
    rhs: List[float] = []
    kinds: List[str] = []
    for point, strict in zip(hull.points, hull.strict):
        rows.append(-point)
        rhs.append(1.0)
        kinds.append('atom' if strict else 'endpoint')
    for ray in hull.rays:
        rows.append(-ray)
        rhs.append(0.0)
        kinds.append('ray')
    G = np.vstack(rows) if rows else np.zeros((0, d))
    result = NaturalConstraints(G=G, r=np.array(rhs, dtype=float), kinds=tuple(kinds))
    logger.debug(f"C0 built from {len(rows)} halfspaces ({kinds.count('atom')} atoms, {kinds.count('ray')} rays)")
    return result


def null_space(triplet: LevyTriplet, tol: float = 1e-9) -> np.ndarray:
    """
    Orthonormal basis (columns) of N = {y : y·b = 0, c y = 0, y·x = 0 on supp F}.
    """
    d = triplet.dim
    stacked = np.vstack([triplet.b[None, :], triplet.c, triplet.jumps.support_vectors(d)])
    if not np.any(stacked):
        return np.eye(d)
    return kernel(stacked, rcond=tol)


def project_onto_N_perp(y, basis: np.ndarray) -> np.ndarray:
    """y minus its component in span(basis)."""
    y = np.asarray(y, dtype=float)
    if basis.size == 0:
        return y.copy()
    return y - basis @ (basis.T @ y)


def recession_generators(A: np.ndarray, tol: float = 1e-9, max_combinations: int = 20000) -> np.ndarray:
    """
    Generators (rows) of the polyhedral cone {y : A y <= 0}.

    The lineality space contributes ±basis vectors; the pointed part is
    enumerated through (d-1)-subsets of active rows.
    """
    d = A.shape[1]
    if A.shape[0] == 0:
        return np.vstack([np.eye(d), -np.eye(d)])
    lineality = kernel(A, rcond=tol)
    generators: List[np.ndarray] = [v for col in lineality.T for v in (col, -col)]
    if lineality.shape[1]:
        complement = kernel(lineality.T, rcond=tol)
    else:
        complement = np.eye(d)
    k = complement.shape[1]
    if k == 0:
        return np.vstack(generators)
    reduced = A @ complement
    if k == 1:
        candidates = [np.array([1.0]), np.array([-1.0])]
    else:
        if math.comb(reduced.shape[0], k - 1) > max_combinations:
            logger.warning("Recession cone too large to enumerate generators")
            return np.vstack(generators) if generators else np.zeros((0, d))
        candidates = []
        for rows in itertools.combinations(range(reduced.shape[0]), k - 1):
            direction = kernel(reduced[list(rows)], rcond=tol)
            if direction.shape[1] == 1:
                candidates.extend([direction[:, 0], -direction[:, 0]])
    for cand in candidates:
        if np.all(reduced @ cand <= tol):
            vec = complement @ cand
            vec = vec / np.linalg.norm(vec)
            if not any(np.allclose(vec, g, atol=1e-8) for g in generators):
                generators.append(vec)
    return np.vstack(generators) if generators else np.zeros((0, d))
