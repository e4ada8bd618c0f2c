"""
Portfolio constraint sets C.

Top-level sets contain the origin (union pieces need not). Convex variants expose scipy-style inequality
constraints (fun(y) >= 0) so the optimizer can work with any of them; the
polyhedral ones additionally expose their rows A·y <= rhs for LP work.
"""
import itertools
import logging
import math
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.spatial import ConvexHull
from scipy.stats import qmc

logger = logging.getLogger(__name__)

RADIAL_LIMIT = 1e8
MAX_VERTEX_COMBINATIONS = 20000


class ConstraintSet:
    """Base class for constraint sets in R^dim."""

    kind = "abstract"
    is_convex = True
    is_polyhedral = False

    def __init__(self, dim: int):
        self.dim = int(dim)

    # -- shape ---------------------------------------------------------------

    @property
    def is_compact(self) -> bool:
        return False

    @property
    def is_star_shaped(self) -> bool:
        return self.is_convex

    @property
    def is_cone(self) -> bool:
        return False

    @property
    def pieces(self) -> List["ConstraintSet"]:
        return [self]

    def linear_rows(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """(A, rhs) with C = {A y <= rhs}, or None when C is not polyhedral."""
        return None

    def recession_rows(self) -> Optional[np.ndarray]:
        """Rows A with recession cone {A y <= 0}; None when unknown or not polyhedral."""
        rows = self.linear_rows()
        return None if rows is None else rows[0]

    # -- membership ----------------------------------------------------------

    def contains(self, y, tol: float = 1e-9) -> bool:
        raise NotImplementedError

    def scipy_constraints(self) -> List[Dict]:
        """Inequality constraints {'type': 'ineq', 'fun', 'jac'} describing C."""
        raise NotImplementedError

    def radial_bound(self, u) -> float:
        """sup{t >= 0 : t·u in C}, by bisection on membership."""
        u = np.asarray(u, dtype=float)
        if self.contains(RADIAL_LIMIT * u):
            return math.inf
        lo, hi = 0.0, RADIAL_LIMIT
        if not self.contains(lo * u):
            return 0.0
        for _ in range(200):
            mid = math.sqrt(lo * hi) if lo > 0 else min(1.0, hi / 2.0)
            if self.contains(mid * u):
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * max(1.0, hi):
                break
        return lo

    def candidate_points(self) -> np.ndarray:
        """Finite set of points of C (vertices and representative samples)."""
        return np.zeros((1, self.dim))

    def project(self, y) -> np.ndarray:
        """Euclidean projection onto C (SLSQP on the squared distance)."""
        y = np.asarray(y, dtype=float)
        if self.contains(y):
            return y.copy()
        result = minimize(
            lambda z: 0.5 * float(np.dot(z - y, z - y)),
            np.zeros(self.dim),
            jac=lambda z: z - y,
            constraints=self.scipy_constraints(),
            method="SLSQP",
            options={'ftol': 1e-14, 'maxiter': 500},
        )
        return result.x

    def _with_origin(self, points: np.ndarray) -> np.ndarray:
        origin = np.zeros((1, self.dim))
        if self.contains(origin[0]):
            return np.vstack([origin, points])
        return points

    def check_origin(self) -> None:
        if not self.contains(np.zeros(self.dim)):
            raise ValueError(f"{self.kind} constraint set does not contain the origin")

    def to_dict(self) -> Dict:
        return {'kind': self.kind}


class Polyhedron(ConstraintSet):
    """{y : A y <= rhs}."""

    kind = "polyhedron"
    is_polyhedral = True

    def __init__(self, A, rhs):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        if A.shape[0] != rhs.shape[0]:
            raise ValueError(f"polyhedron has {A.shape[0]} rows but {rhs.shape[0]} right-hand sides")
        super().__init__(A.shape[1])
        self.A = A
        self.rhs = rhs

    def linear_rows(self):
        return self.A, self.rhs

    def contains(self, y, tol: float = 1e-9) -> bool:
        if self.A.shape[0] == 0:
            return True
        slack = self.rhs - self.A @ np.asarray(y, dtype=float)
        return bool(np.all(slack >= -tol * np.maximum(1.0, np.abs(self.rhs))))

    def scipy_constraints(self):
        if self.A.shape[0] == 0:
            return []
        A, rhs = self.A, self.rhs
        return [{'type': 'ineq', 'fun': lambda y: rhs - A @ y, 'jac': lambda y: -A}]

    def radial_bound(self, u) -> float:
        growth = self.A @ np.asarray(u, dtype=float)
        active = growth > 1e-15
        if not np.any(active):
            return math.inf
        return float(np.min(self.rhs[active] / growth[active]))

    @cached_property
    def is_compact(self) -> bool:
        if self.A.shape[0] == 0:
            return False
        for i, sign in itertools.product(range(self.dim), (1.0, -1.0)):
            objective = np.zeros(self.dim)
            objective[i] = -sign
            result = linprog(objective, A_ub=self.A, b_ub=np.zeros(self.A.shape[0]),
                             bounds=[(-1.0, 1.0)] * self.dim, method="highs")
            if result.status == 0 and -result.fun > 1e-9:
                return False
        return True

    @cached_property
    def vertices(self) -> np.ndarray:
        """Vertices by enumeration of active row subsets (small problems only)."""
        m, d = self.A.shape
        found: List[np.ndarray] = []
        if m < d or math.comb(m, d) > MAX_VERTEX_COMBINATIONS:
            return np.zeros((0, d))
        for rows in itertools.combinations(range(m), d):
            sub = self.A[list(rows)]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            point = np.linalg.solve(sub, self.rhs[list(rows)])
            if self.contains(point, tol=1e-9) and not any(np.allclose(point, f) for f in found):
                found.append(point)
        return np.vstack(found) if found else np.zeros((0, d))

    def candidate_points(self) -> np.ndarray:
        return self._with_origin(self.vertices)

    def to_dict(self):
        return {'kind': self.kind, 'A': self.A.tolist(), 'b': self.rhs.tolist()}


class Reals(Polyhedron):
    """C = R^d."""

    kind = "reals"

    def __init__(self, dim: int):
        super().__init__(np.zeros((0, dim)), np.zeros(0))

    def to_dict(self):
        return {'kind': self.kind, 'dim': self.dim}


class Box(Polyhedron):
    """lower <= y <= upper componentwise; infinite bounds allowed."""

    kind = "box"

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValueError("box bounds must have the same shape")
        rows, rhs = [], []
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            if math.isfinite(hi):
                row = np.zeros(lower.shape[0])
                row[i] = 1.0
                rows.append(row)
                rhs.append(hi)
            if math.isfinite(lo):
                row = np.zeros(lower.shape[0])
                row[i] = -1.0
                rows.append(row)
                rhs.append(-lo)
        A = np.vstack(rows) if rows else np.zeros((0, lower.shape[0]))
        self.lower = lower
        self.upper = upper
        super().__init__(A, np.array(rhs, dtype=float))

    @property
    def is_compact(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    @cached_property
    def vertices(self) -> np.ndarray:
        ends = [[v for v in (lo, hi) if math.isfinite(v)] or [0.0] for lo, hi in zip(self.lower, self.upper)]
        return np.array(list(itertools.product(*ends)), dtype=float)

    def project(self, y):
        return np.clip(np.asarray(y, dtype=float), self.lower, self.upper)

    def to_dict(self):
        return {'kind': self.kind, 'lower': self.lower.tolist(), 'upper': self.upper.tolist()}


class Hull(Polyhedron):
    """Convex hull of finitely many points (must contain the origin)."""

    kind = "hull"

    def __init__(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        self.points = points
        A, rhs = _hull_rows(points)
        super().__init__(A, rhs)

    @property
    def is_compact(self) -> bool:
        return True

    def candidate_points(self) -> np.ndarray:
        return self._with_origin(self.points)

    def to_dict(self):
        return {'kind': self.kind, 'points': self.points.tolist()}


def _hull_rows(points: np.ndarray, tol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
    """Halfspace rows of conv(points), working inside the linear span of the points."""
    d = points.shape[1]
    _, s, vt = np.linalg.svd(points, full_matrices=True)
    rank = int(np.sum(s > tol * max(1.0, s.max()))) if s.size else 0
    basis, complement = vt[:rank].T, vt[rank:].T
    rows = [complement.T, -complement.T]
    rhs = [np.zeros(d - rank), np.zeros(d - rank)]
    if rank == 1:
        coords = points @ basis[:, 0]
        rows += [basis.T, -basis.T]
        rhs += [np.array([coords.max()]), np.array([-coords.min()])]
    elif rank >= 2:
        hull = ConvexHull(points @ basis)
        normals, offsets = hull.equations[:, :-1], hull.equations[:, -1]
        rows.append(normals @ basis.T)
        rhs.append(-offsets)
    return np.vstack(rows), np.concatenate(rhs)


class Ball(ConstraintSet):
    """Closed Euclidean ball."""

    kind = "ball"

    def __init__(self, center, radius: float):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        super().__init__(self.center.shape[0])

    @property
    def is_compact(self) -> bool:
        return True

    def recession_rows(self):
        return np.vstack([np.eye(self.dim), -np.eye(self.dim)])

    def contains(self, y, tol: float = 1e-9) -> bool:
        return float(np.linalg.norm(np.asarray(y, dtype=float) - self.center)) <= self.radius * (1 + tol) + tol

    def scipy_constraints(self):
        c, r2 = self.center, self.radius ** 2
        return [{
            'type': 'ineq',
            'fun': lambda y: np.array([r2 - np.dot(y - c, y - c)]),
            'jac': lambda y: (-2.0 * (y - c))[None, :],
        }]

    def radial_bound(self, u) -> float:
        u = np.asarray(u, dtype=float)
        uu, uc = float(u @ u), float(u @ self.center)
        if uu == 0:
            return math.inf
        disc = uc * uc - uu * (float(self.center @ self.center) - self.radius ** 2)
        return max(0.0, (uc + math.sqrt(max(disc, 0.0))) / uu)

    def candidate_points(self) -> np.ndarray:
        eye = np.eye(self.dim)
        return self._with_origin(np.vstack([self.center + self.radius * eye, self.center - self.radius * eye]))

    def project(self, y):
        y = np.asarray(y, dtype=float)
        offset = y - self.center
        dist = np.linalg.norm(offset)
        if dist <= self.radius:
            return y.copy()
        return self.center + offset * (self.radius / dist)

    def to_dict(self):
        return {'kind': self.kind, 'center': self.center.tolist(), 'radius': self.radius}


class SecondOrderCone(ConstraintSet):
    """{y : |y_rest| <= y_axis}, rest = all coordinates except `axis`."""

    kind = "soc"

    def __init__(self, dim: int, axis: int = -1):
        super().__init__(dim)
        self.axis = axis % dim
        self.rest = [i for i in range(dim) if i != self.axis]

    @property
    def is_cone(self) -> bool:
        return True

    def contains(self, y, tol: float = 1e-9) -> bool:
        y = np.asarray(y, dtype=float)
        return float(np.linalg.norm(y[self.rest])) <= y[self.axis] + tol * max(1.0, abs(y[self.axis]))

    def scipy_constraints(self):
        axis, rest = self.axis, self.rest
        d = self.dim

        def quad(y):
            return np.array([y[axis] ** 2 - np.dot(y[rest], y[rest])])

        def quad_jac(y):
            g = np.zeros((1, d))
            g[0, axis] = 2.0 * y[axis]
            g[0, rest] = -2.0 * y[rest]
            return g

        unit = np.zeros((1, d))
        unit[0, axis] = 1.0
        return [
            {'type': 'ineq', 'fun': lambda y: np.array([y[axis]]), 'jac': lambda y: unit},
            {'type': 'ineq', 'fun': quad, 'jac': quad_jac},
        ]

    def radial_bound(self, u) -> float:
        return math.inf if self.contains(u) else 0.0

    def candidate_points(self) -> np.ndarray:
        points = [np.zeros(self.dim)]
        apex = np.zeros(self.dim)
        apex[self.axis] = 1.0
        points.append(apex)
        for j in self.rest:
            for sign in (1.0, -1.0):
                point = apex.copy()
                point[j] = sign
                points.append(point)
        return np.vstack(points)

    def project(self, y):
        y = np.asarray(y, dtype=float)
        t, x = y[self.axis], y[self.rest]
        nx = float(np.linalg.norm(x))
        if nx <= t:
            return y.copy()
        if nx <= -t:
            return np.zeros_like(y)
        scale = 0.5 * (nx + t)
        out = np.zeros_like(y)
        out[self.axis] = scale
        out[self.rest] = scale * x / nx
        return out

    def to_dict(self):
        return {'kind': self.kind, 'dim': self.dim, 'axis': self.axis}


class Union(ConstraintSet):
    """Finite union of convex pieces; at least one piece contains the origin."""

    kind = "union"
    is_convex = False

    def __init__(self, pieces: Sequence[ConstraintSet]):
        pieces = list(pieces)
        if not pieces:
            raise ValueError("union needs at least one piece")
        if any(not piece.is_convex for piece in pieces):
            raise ValueError("union pieces must be convex")
        super().__init__(pieces[0].dim)
        self._pieces = pieces
        self.check_origin()

    @property
    def pieces(self) -> List[ConstraintSet]:
        return list(self._pieces)

    @property
    def is_polyhedral(self) -> bool:
        return all(piece.is_polyhedral for piece in self._pieces)

    @property
    def is_compact(self) -> bool:
        return all(piece.is_compact for piece in self._pieces)

    @property
    def is_star_shaped(self) -> bool:
        origin = np.zeros(self.dim)
        return all(piece.contains(origin) for piece in self._pieces)

    def linear_rows(self):
        return None

    def recession_rows(self):
        return None

    def contains(self, y, tol: float = 1e-9) -> bool:
        return any(piece.contains(y, tol) for piece in self._pieces)

    def scipy_constraints(self):
        raise NotImplementedError("a union has no single convex description")

    def radial_bound(self, u) -> float:
        origin = np.zeros(self.dim)
        bounds = [piece.radial_bound(u) for piece in self._pieces if piece.contains(origin)]
        return max(bounds) if bounds else 0.0

    def candidate_points(self) -> np.ndarray:
        return np.vstack([piece.candidate_points() for piece in self._pieces])

    def project(self, y):
        y = np.asarray(y, dtype=float)
        projections = [piece.project(y) for piece in self._pieces]
        return min(projections, key=lambda z: float(np.linalg.norm(z - y)))

    def to_dict(self):
        return {'kind': self.kind, 'pieces': [piece.to_dict() for piece in self._pieces]}


class StarShapedOracle(ConstraintSet):
    """
    Star-shaped set given by a membership function.

    Args:
        dim: Dimension
        membership: Callable y -> bool
        radial_limit: Bound on the norm of members considered (the set is
            treated as compact when `compact` is set)
        recession_rows: Optional rows describing the recession cone
        compact: Whether the set is bounded by radial_limit
        spot_checks: Random star-shapedness checks at construction
    """

    kind = "oracle"
    is_convex = False

    def __init__(
        self,
        dim: int,
        membership: Callable[[np.ndarray], bool],
        radial_limit: float = 10.0,
        recession_rows: Optional[np.ndarray] = None,
        compact: bool = False,
        spot_checks: int = 256,
        seed: int = 0,
    ):
        super().__init__(dim)
        self.membership = membership
        self.radial_limit = float(radial_limit)
        self._recession = None if recession_rows is None else np.atleast_2d(np.asarray(recession_rows, dtype=float))
        self._compact = bool(compact)
        self.check_origin()
        self._spot_check(spot_checks, seed)

    def _spot_check(self, count: int, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for _ in range(count):
            y = rng.uniform(-self.radial_limit, self.radial_limit, self.dim)
            if self.membership(y):
                scale = rng.random()
                if not self.membership(scale * y):
                    raise ValueError(f"membership oracle is not star-shaped at {y.tolist()} (scale {scale:.3f})")

    @property
    def is_star_shaped(self) -> bool:
        return True

    @property
    def is_compact(self) -> bool:
        return self._compact

    def recession_rows(self):
        return self._recession

    def contains(self, y, tol: float = 1e-9) -> bool:
        return bool(self.membership(np.asarray(y, dtype=float)))

    def scipy_constraints(self):
        raise NotImplementedError("an oracle set has no closed-form description")

    def radial_bound(self, u) -> float:
        u = np.asarray(u, dtype=float)
        if self.contains(self.radial_limit * u):
            return math.inf if not self._compact else self.radial_limit
        lo, hi = 0.0, self.radial_limit
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.contains(mid * u):
                lo = mid
            else:
                hi = mid
        return lo

    def candidate_points(self) -> np.ndarray:
        sampler = qmc.Sobol(d=self.dim, scramble=False)
        grid = 2.0 * sampler.random_base2(m=8) - 1.0
        members = [self.radial_bound(u) * u for u in grid if np.linalg.norm(u) > 0]
        finite = [m for m in members if np.all(np.isfinite(m))]
        return np.vstack([np.zeros((1, self.dim)), *finite]) if finite else np.zeros((1, self.dim))

    def project(self, y):
        y = np.asarray(y, dtype=float)
        if self.contains(y):
            return y.copy()
        points = self.candidate_points()
        return points[np.argmin(np.linalg.norm(points - y, axis=1))]

    def to_dict(self):
        return {'kind': self.kind, 'dim': self.dim, 'radial_limit': self.radial_limit, 'compact': self._compact}


class PulledBack(ConstraintSet):
    """{z : M z in C} for a linear map M (transformed constraint set)."""

    kind = "pulled_back"

    def __init__(self, base: ConstraintSet, matrix):
        self.base = base
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        super().__init__(self.matrix.shape[1])
        self.is_convex = base.is_convex

    @property
    def is_polyhedral(self) -> bool:
        return self.base.is_polyhedral

    @property
    def is_star_shaped(self) -> bool:
        return self.base.is_star_shaped

    @property
    def is_cone(self) -> bool:
        return self.base.is_cone

    @property
    def is_compact(self) -> bool:
        # compact only if M is injective
        return self.base.is_compact and np.linalg.matrix_rank(self.matrix) == self.dim

    @property
    def pieces(self):
        if self.base.is_convex:
            return [self]
        return [PulledBack(piece, self.matrix) for piece in self.base.pieces]

    def linear_rows(self):
        rows = self.base.linear_rows()
        if rows is None:
            return None
        return rows[0] @ self.matrix, rows[1]

    def recession_rows(self):
        rows = self.base.recession_rows()
        if rows is None:
            return None
        return rows @ self.matrix

    def contains(self, z, tol: float = 1e-9) -> bool:
        return self.base.contains(self.matrix @ np.asarray(z, dtype=float), tol)

    def scipy_constraints(self):
        M = self.matrix
        out = []
        for cons in self.base.scipy_constraints():
            fun, jac = cons['fun'], cons['jac']
            out.append({
                'type': 'ineq',
                'fun': (lambda f: lambda z: f(M @ z))(fun),
                'jac': (lambda j: lambda z: np.atleast_2d(j(M @ z)) @ M)(jac),
            })
        return out

    def radial_bound(self, u) -> float:
        image = self.matrix @ np.asarray(u, dtype=float)
        if np.linalg.norm(image) == 0:
            return math.inf
        return self.base.radial_bound(image)

    def candidate_points(self) -> np.ndarray:
        pinv = np.linalg.pinv(self.matrix)
        points = self.base.candidate_points() @ pinv.T
        keep = [z for z in points if self.contains(z)]
        return np.vstack(keep) if keep else np.zeros((1, self.dim))

    def to_dict(self):
        return {'kind': self.kind, 'matrix': self.matrix.tolist(), 'base': self.base.to_dict()}


class Intersection(ConstraintSet):
    """Intersection of convex sets."""

    kind = "intersection"

    def __init__(self, parts: Sequence[ConstraintSet]):
        self.parts = list(parts)
        super().__init__(self.parts[0].dim)
        self.is_convex = all(part.is_convex for part in self.parts)

    @property
    def is_star_shaped(self) -> bool:
        return all(part.is_star_shaped for part in self.parts)

    @property
    def pieces(self) -> List[ConstraintSet]:
        if self.is_convex:
            return [self]
        k = next(i for i, part in enumerate(self.parts) if not part.is_convex)
        others = self.parts[:k] + self.parts[k + 1:]
        return [Intersection([piece, *others]) for piece in self.parts[k].pieces]

    @property
    def is_polyhedral(self) -> bool:
        return all(part.is_polyhedral for part in self.parts)

    @property
    def is_compact(self) -> bool:
        return any(part.is_compact for part in self.parts)

    def linear_rows(self):
        rows = [part.linear_rows() for part in self.parts]
        if any(r is None for r in rows):
            return None
        return np.vstack([r[0] for r in rows]), np.concatenate([r[1] for r in rows])

    def recession_rows(self):
        if self.is_compact:
            return np.vstack([np.eye(self.dim), -np.eye(self.dim)])
        rows = [part.recession_rows() for part in self.parts]
        if any(r is None for r in rows):
            return None
        return np.vstack(rows)

    def contains(self, y, tol: float = 1e-9) -> bool:
        return all(part.contains(y, tol) for part in self.parts)

    def scipy_constraints(self):
        return [cons for part in self.parts for cons in part.scipy_constraints()]

    def radial_bound(self, u) -> float:
        return min(part.radial_bound(u) for part in self.parts)

    def candidate_points(self) -> np.ndarray:
        points = np.vstack([part.candidate_points() for part in self.parts])
        keep = [y for y in points if self.contains(y)]
        return np.vstack(keep) if keep else np.zeros((1, self.dim))

    def to_dict(self):
        return {'kind': self.kind, 'parts': [part.to_dict() for part in self.parts]}


def constraint_from_dict(data: Dict, dim: int) -> ConstraintSet:
    """Build a constraint set from its model-file mapping."""
    kind = data.get('kind', 'reals')
    if kind == 'reals':
        return Reals(dim)
    if kind == 'polyhedron':
        return Polyhedron(data['A'], data['b'])
    if kind == 'box':
        return Box(_bounds(data['lower'], dim), _bounds(data['upper'], dim))
    if kind == 'ball':
        return Ball(data.get('center', [0.0] * dim), float(data['radius']))
    if kind == 'hull':
        return Hull(data['points'])
    if kind == 'soc':
        return SecondOrderCone(dim, int(data.get('axis', -1)))
    if kind == 'union':
        return Union([constraint_from_dict(piece, dim) for piece in data['pieces']])
    raise ValueError(f"Unknown constraint kind: {kind}")


def _bounds(values, dim: int) -> np.ndarray:
    if not isinstance(values, (list, tuple)):
        values = [values] * dim
    return np.array([float(v) for v in values], dtype=float)
