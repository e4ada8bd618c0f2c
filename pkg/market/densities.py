"""
Absolutely continuous parts of a Lévy jump measure.

Every part is a ray density: jumps are x = s·v for a fixed direction v in R^d
and a scalar mark s with density f(s) on the support interval [lo, hi]. The
family is closed under linear maps (v -> Λv) and under exponential tilting,
which keeps transformed and measure-changed triplets representable.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.integrate import IntegrationWarning, cumulative_trapezoid, quad

from utils.errors import QuadratureFailure, SimulationError, UnboundedSupportWithoutTailModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TailModel:
    """Decay annotation for |s| -> infinity: power (f ~ |s|^(-rate-1)) or exponential."""

    kind: str
    rate: float

    def __post_init__(self):
        if self.kind not in ("power", "exponential"):
            raise ValueError(f"Unknown tail kind: {self.kind}")
        if not self.rate > 0:
            raise ValueError(f"Tail rate must be positive, got {self.rate}")

    def moment_finite(self, order: float) -> bool:
        """True iff the integral of |s|^order f(s) over the tail converges."""
        if self.kind == "exponential" or order <= 0:
            return True
        return order < self.rate

    def to_dict(self) -> Dict:
        return {'kind': self.kind, 'rate': float(self.rate)}


@dataclass(frozen=True)
class QuadGrid:
    """User-declared quadrature controls for one density part."""

    limit: int = 200
    points: Tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> Dict:
        return {'limit': int(self.limit), 'points': [float(p) for p in self.points]}


class DensityPart:
    """Base class: density f(s) on [lo, hi] along direction v."""

    kind = "base"

    def __init__(
        self,
        direction,
        support: Tuple[float, float],
        tail: Optional[TailModel] = None,
        grid: Optional[QuadGrid] = None,
    ):
        v = np.atleast_1d(np.asarray(direction, dtype=float)).copy()
        v.setflags(write=False)
        lo, hi = float(support[0]), float(support[1])
        if not lo < hi:
            raise ValueError(f"Empty density support [{lo}, {hi}]")
        self.direction = v
        self.lo = lo
        self.hi = hi
        self.tail = tail if tail is not None else self.default_tail()
        self.grid = grid if grid is not None else QuadGrid()

    # -- description -------------------------------------------------------

    def default_tail(self) -> Optional[TailModel]:
        return None

    def params(self) -> Dict:
        return {}

    def pdf(self, s):
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return self.direction.shape[0]

    @property
    def norm_v(self) -> float:
        return float(np.linalg.norm(self.direction))

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def contains_zero(self) -> bool:
        return self.lo <= 0.0 <= self.hi

    def require_tail(self) -> TailModel:
        """Tail annotation, mandatory for unbounded supports."""
        if self.bounded:
            return self.tail
        if self.tail is None:
            raise UnboundedSupportWithoutTailModel(
                f"{self.kind} density on [{self.lo}, {self.hi}] has unbounded support "
                f"but no tail annotation"
            )
        return self.tail

    def endpoints(self) -> List[Tuple[np.ndarray, bool]]:
        """
        Extreme points and rays of the support segment in R^d.

        Returns:
            List of (vector, is_ray); finite endpoints give s·v, infinite ones
            give the unbounded direction ±v.
        """
        out = []
        for s, sign in ((self.lo, -1.0), (self.hi, 1.0)):
            if math.isfinite(s):
                out.append((s * self.direction, False))
            else:
                out.append((sign * self.direction, True))
        return out

    def to_dict(self) -> Dict:
        out = {
            'kind': self.kind,
            'params': self.params(),
            'direction': [float(x) for x in self.direction],
            'support': [self.lo, self.hi],
            'grid': self.grid.to_dict(),
        }
        if self.tail is not None:
            out['tail'] = self.tail.to_dict()
        return out

    # -- transformations ---------------------------------------------------

    def with_direction(self, direction) -> "DensityPart":
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        v = np.asarray(direction, dtype=float).copy()
        v.setflags(write=False)
        clone.direction = v
        return clone

    def tilted(self, weight: float, exponent: float) -> "TiltedDensity":
        """Density f(s)·(1 + s·weight)^exponent on the same support."""
        return TiltedDensity(self, weight, exponent)

    # -- integration -------------------------------------------------------

    def integrate(
        self,
        func: Callable[[float], float],
        breaks: Iterable[float] = (),
        epsrel: float = 1e-9,
        epsabs: float = 1e-12,
        lo: Optional[float] = None,
        hi: Optional[float] = None,
    ) -> Tuple[float, float, bool]:
        """
        Integrate func(s)·f(s) over the support (or a sub-interval).

        The interval is split at the declared grid points and at the given
        breakpoints (integrand kinks).

        Returns:
            Tuple of (value, error estimate, warned) where warned means scipy
            reported an IntegrationWarning on some piece.
        """
        a = self.lo if lo is None else max(self.lo, lo)
        b = self.hi if hi is None else min(self.hi, hi)
        if not a < b:
            return 0.0, 0.0, False

        cuts = sorted({float(x) for x in (*breaks, *self.grid.points) if a < x < b})
        edges = [a, *cuts, b]

        def integrand(s):
            return float(func(s)) * float(self.pdf(s))

        total, total_err, warned = 0.0, 0.0, False
        for left, right in zip(edges[:-1], edges[1:]):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", IntegrationWarning)
                value, err = quad(integrand, left, right, epsabs=epsabs, epsrel=epsrel,
                                  limit=self.grid.limit)
            if any(issubclass(w.category, IntegrationWarning) for w in caught):
                warned = True
            total += value
            total_err += err
        return total, total_err, warned

    def mass(self, lo: Optional[float] = None, hi: Optional[float] = None) -> float:
        """Total mass of the part (possibly restricted); inf when not integrable."""
        value, err, warned = self.integrate(lambda s: 1.0, lo=lo, hi=hi)
        if not math.isfinite(value) or (warned and err > 1e-6 * max(1.0, abs(value))):
            return math.inf
        return value

    # -- simulation --------------------------------------------------------

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw marks s from the normalized density (numerical inverse CDF)."""
        return self._numeric_sample(rng, size)

    def _sampling_interval(self) -> Tuple[float, float]:
        a, b = self.lo, self.hi
        if self.bounded:
            return a, b
        tail = self.require_tail()
        total = self.mass()
        if not math.isfinite(total):
            raise SimulationError(f"{self.kind} density has infinite mass")
        # truncate where the neglected tail mass is below 1e-12 of the total
        step = max(1.0, abs(a) if math.isfinite(a) else 1.0, abs(b) if math.isfinite(b) else 1.0)
        if not math.isfinite(b):
            b = max(a, 0.0) + step
            while self.mass(lo=b) > 1e-12 * total and b < 1e12:
                b *= 2.0
        if not math.isfinite(a):
            a = min(b, 0.0) - step
            while self.mass(hi=a) > 1e-12 * total and a > -1e12:
                a *= 2.0
        logger.debug(f"{self.kind} density truncated to [{a:.4g}, {b:.4g}] for sampling ({tail.kind} tail)")
        return a, b

    def _numeric_sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        a, b = self._sampling_interval()
        grid = _sampling_grid(a, b, self.grid.points)
        density = np.nan_to_num(np.asarray(self.pdf(grid), dtype=float), posinf=0.0)
        cdf = cumulative_trapezoid(density, grid, initial=0.0)
        if cdf[-1] <= 0:
            raise SimulationError(f"{self.kind} density has no mass on [{a}, {b}]")
        cdf /= cdf[-1]
        u = rng.random(size)
        return np.interp(u, cdf, grid)


def _sampling_grid(a: float, b: float, points: Iterable[float], n: int = 20001) -> np.ndarray:
    """Grid refined geometrically toward both endpoints (density singularities)."""
    t = np.linspace(0.0, 1.0, n)
    refined = 0.5 - 0.5 * np.cos(np.pi * t)
    grid = a + (b - a) * refined
    extra = [p for p in points if a < p < b]
    return np.unique(np.concatenate([grid, np.asarray(extra, dtype=float)]))


class UniformDensity(DensityPart):
    """Constant intensity `rate` on a bounded interval."""

    kind = "uniform"

    def __init__(self, rate: float, direction, support, tail=None, grid=None):
        super().__init__(direction, support, tail, grid)
        if not self.bounded:
            raise ValueError("uniform density needs a bounded support")
        if rate <= 0:
            raise ValueError(f"uniform rate must be positive, got {rate}")
        self.rate = float(rate)

    def params(self) -> Dict:
        return {'rate': self.rate}

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where((s >= self.lo) & (s <= self.hi), self.rate, 0.0)

    def sample(self, rng, size):
        return self.lo + (self.hi - self.lo) * rng.random(size)


class ParetoDensity(DensityPart):
    """scale·alpha·|s|^(-alpha-1) on a support that stays away from zero."""

    kind = "pareto"

    def __init__(self, alpha: float, scale: float, direction, support, tail=None, grid=None):
        self.alpha = float(alpha)
        self.scale = float(scale)
        if self.alpha <= 0 or self.scale <= 0:
            raise ValueError("pareto alpha and scale must be positive")
        super().__init__(direction, support, tail, grid)
        if self.contains_zero():
            raise ValueError("pareto support must not contain 0")

    def default_tail(self):
        return TailModel("power", self.alpha)

    def params(self) -> Dict:
        return {'alpha': self.alpha, 'scale': self.scale}

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s >= self.lo) & (s <= self.hi)
        mag = np.where(inside, np.abs(s), 1.0)
        return np.where(inside, self.scale * self.alpha * mag ** (-self.alpha - 1.0), 0.0)

    def sample(self, rng, size):
        # truncated Pareto by inverse CDF on |s|
        negative = self.hi <= 0
        a, b = (-self.hi, -self.lo) if negative else (self.lo, self.hi)
        u = rng.random(size)
        top = a ** (-self.alpha)
        bottom = b ** (-self.alpha) if math.isfinite(b) else 0.0
        mags = (top - u * (top - bottom)) ** (-1.0 / self.alpha)
        return -mags if negative else mags


class ExponentialDensity(DensityPart):
    """scale·rate·exp(-rate·|s|)."""

    kind = "exponential"

    def __init__(self, rate: float, scale: float, direction, support, tail=None, grid=None):
        self.rate = float(rate)
        self.scale = float(scale)
        if self.rate <= 0 or self.scale <= 0:
            raise ValueError("exponential rate and scale must be positive")
        super().__init__(direction, support, tail, grid)

    def default_tail(self):
        return TailModel("exponential", self.rate)

    def params(self) -> Dict:
        return {'rate': self.rate, 'scale': self.scale}

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s >= self.lo) & (s <= self.hi)
        return np.where(inside, self.scale * self.rate * np.exp(-self.rate * np.abs(s)), 0.0)

    def sample(self, rng, size):
        if self.lo >= 0:
            # truncated exponential on [lo, hi]
            u = rng.random(size)
            upper = 1.0 - math.exp(-self.rate * (self.hi - self.lo)) if math.isfinite(self.hi) else 1.0
            return self.lo - np.log1p(-u * upper) / self.rate
        return self._numeric_sample(rng, size)


class GaussianDensity(DensityPart):
    """scale times the N(mean, std^2) density restricted to the support."""

    kind = "gaussian"

    def __init__(self, mean: float, std: float, scale: float, direction, support, tail=None, grid=None):
        self.mean = float(mean)
        self.std = float(std)
        self.scale = float(scale)
        if self.std <= 0 or self.scale <= 0:
            raise ValueError("gaussian std and scale must be positive")
        super().__init__(direction, support, tail, grid)

    def default_tail(self):
        # faster than any exponential; the exponential annotation is conservative
        return TailModel("exponential", 1.0 / self.std)

    def params(self) -> Dict:
        return {'mean': self.mean, 'std': self.std, 'scale': self.scale}

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s >= self.lo) & (s <= self.hi)
        return np.where(inside, self.scale * stats.norm.pdf(s, loc=self.mean, scale=self.std), 0.0)

    def sample(self, rng, size):
        a = (self.lo - self.mean) / self.std
        b = (self.hi - self.mean) / self.std
        return stats.truncnorm.rvs(a, b, loc=self.mean, scale=self.std, size=size, random_state=rng)


class CgmyDensity(DensityPart):
    """
    Tempered stable (CGMY) Lévy density, C·exp(-G|s|)/|s|^(1+Y) for s < 0 and
    C·exp(-M s)/s^(1+Y) for s > 0. Infinite activity near zero unless the
    support is truncated at some |s| >= eps > 0.
    """

    kind = "cgmy"

    def __init__(self, C: float, G: float, M: float, Y: float, direction, support, tail=None, grid=None):
        self.C, self.G, self.M, self.Y = float(C), float(G), float(M), float(Y)
        if self.C <= 0 or self.G <= 0 or self.M <= 0 or not self.Y < 2:
            raise ValueError("cgmy needs C, G, M > 0 and Y < 2")
        super().__init__(direction, support, tail, grid)

    def default_tail(self):
        return TailModel("exponential", min(self.G, self.M))

    def params(self) -> Dict:
        return {'C': self.C, 'G': self.G, 'M': self.M, 'Y': self.Y}

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s >= self.lo) & (s <= self.hi) & (s != 0)
        mag = np.where(inside, np.abs(s), 1.0)
        rate = np.where(s < 0, self.G, self.M)
        return np.where(inside, self.C * np.exp(-rate * mag) / mag ** (1.0 + self.Y), 0.0)

    def mass(self, lo=None, hi=None):
        a = self.lo if lo is None else max(self.lo, lo)
        b = self.hi if hi is None else min(self.hi, hi)
        if a <= 0.0 <= b and self.Y >= 0:
            return math.inf
        return super().mass(lo=lo, hi=hi)


class TiltedDensity(DensityPart):
    """Base density multiplied by (1 + s·weight)^exponent (Girsanov jump factor)."""

    kind = "tilted"

    def __init__(self, base: DensityPart, weight: float, exponent: float, grid=None):
        self.base = base
        self.weight = float(weight)
        self.exponent = float(exponent)
        super().__init__(base.direction, (base.lo, base.hi), self._tail_from(base), grid or base.grid)

    def _tail_from(self, base: DensityPart) -> Optional[TailModel]:
        if base.tail is None:
            return None
        if base.tail.kind == "power" and self.weight != 0:
            return TailModel("power", base.tail.rate - self.exponent)
        return base.tail

    def with_direction(self, direction):
        clone = super().with_direction(direction)
        clone.base = self.base.with_direction(direction)
        return clone

    def params(self) -> Dict:
        return {'base': self.base.to_dict(), 'weight': self.weight, 'exponent': self.exponent}

    def factor(self, s):
        s = np.asarray(s, dtype=float)
        base = np.maximum(1.0 + s * self.weight, 0.0)
        with np.errstate(divide="ignore"):
            return np.where(base > 0, base ** self.exponent, np.inf if self.exponent < 0 else 0.0)

    def pdf(self, s):
        return np.asarray(self.base.pdf(s), dtype=float) * self.factor(s)

    def mass(self, lo=None, hi=None):
        if math.isinf(self.base.mass(lo=lo, hi=hi)):
            return math.inf
        return super().mass(lo=lo, hi=hi)


DENSITY_KINDS = {
    'uniform': UniformDensity,
    'pareto': ParetoDensity,
    'exponential': ExponentialDensity,
    'gaussian': GaussianDensity,
    'cgmy': CgmyDensity,
}


def check_quadrature(value: float, err: float, warned: bool, fail_tol: float, what: str) -> None:
    """Raise QuadratureFailure when the error estimate is beyond tolerance."""
    if not math.isfinite(value):
        return
    limit = fail_tol * max(1.0, abs(value))
    if err > limit or (warned and err > 0.1 * limit):
        raise QuadratureFailure(f"{what}: error estimate {err:.3e} exceeds {limit:.3e}")
