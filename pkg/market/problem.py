"""
Problem specification: utility exponent, consumption flag, horizon, initial wealth.
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Optional

from geometry.constraints import ConstraintSet, Reals

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by all modules."""

    quad_rel: float = 1e-9
    quad_abs: float = 1e-12
    quad_fail: float = 1e-6
    psd: float = 1e-10
    kernel: float = 1e-9
    membership: float = 1e-9
    optimizer: float = 1e-12
    drift_residual: float = 1e-7

    @classmethod
    def from_dict(cls, values: Optional[Dict]) -> "Tolerances":
        """Build from a settings/model-file mapping, ignoring unknown keys."""
        if not values:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            logger.warning(f"Ignoring unknown tolerance keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in values.items() if k in known})

    def merged(self, overrides: Optional[Dict]) -> "Tolerances":
        if not overrides:
            return self
        base = asdict(self)
        base.update({k: float(v) for k, v in overrides.items() if k in base})
        return Tolerances(**base)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class ProblemSpec:
    """
    Power-utility problem U(x) = x^p / p on [0, T].

    Args:
        p: Utility exponent in (-inf, 0) or (0, 1)
        delta: 1 with intermediate consumption, 0 without
        T: Horizon in years
        x0: Initial wealth
        constraints: Portfolio constraint set C
        tolerances: Numerical tolerances
    """

    p: float
    delta: int = 0
    T: float = 1.0
    x0: float = 1.0
    constraints: ConstraintSet = field(default_factory=lambda: Reals(1))
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if self.p == 0 or not self.p < 1:
            raise ValueError(f"p must lie in (-inf, 0) or (0, 1), got {self.p}")
        if self.delta not in (0, 1):
            raise ValueError(f"delta must be 0 or 1, got {self.delta}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not self.x0 > 0:
            raise ValueError(f"x0 must be positive, got {self.x0}")
        self.constraints.check_origin()

    @property
    def beta(self) -> float:
        return 1.0 / (1.0 - self.p)

    @property
    def q(self) -> float:
        """Conjugate exponent p / (p - 1)."""
        return self.p / (self.p - 1.0)

    def utility(self, x):
        return x ** self.p / self.p

    def to_dict(self) -> Dict:
        return {
            'p': self.p,
            'delta': self.delta,
            'T': self.T,
            'x0': self.x0,
            'constraints': self.constraints.to_dict(),
            'tolerances': self.tolerances.to_dict(),
        }
