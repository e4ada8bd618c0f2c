"""
Opportunity process, optimal propensity to consume and value function.

With a = p/(1-p)·g* and f(τ) = ((1+a)e^{aτ} - 1)/a (f(τ) = 1 + τ at a = 0):

    δ = 1:  ℓ_t = f(T-t)^(1-p),  κ̂_t = 1/f(T-t)
    δ = 0:  ℓ_t = exp(p·g*·(T-t))

and u(x0) = ℓ_0·x0^p/p.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

logger = logging.getLogger(__name__)

A_ZERO_THRESHOLD = 1e-12


@dataclass(frozen=True)
class SolutionCurves:
    """Closed-form evaluators of ℓ and κ̂ on [0, T]."""

    g_star: float
    p: float
    delta: int
    T: float
    x0: float = 1.0

    @property
    def a(self) -> float:
        return self.p / (1.0 - self.p) * self.g_star

    @property
    def has_consumption(self) -> bool:
        return self.delta == 1

    def _f(self, tau):
        a = self.a
        tau = np.asarray(tau, dtype=float)
        if abs(a) < A_ZERO_THRESHOLD:
            return 1.0 + tau
        return np.exp(a * tau) + np.expm1(a * tau) / a

    def _tau(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.T + 1e-12):
            raise ValueError(f"t must lie in [0, {self.T}]")
        return np.clip(self.T - t, 0.0, self.T)

    def ell(self, t):
        """Opportunity process ℓ_t."""
        tau = self._tau(t)
        if self.delta == 1:
            out = self._f(tau) ** (1.0 - self.p)
        else:
            out = np.exp(self.p * self.g_star * tau)
        return float(out) if np.ndim(out) == 0 else out

    def kappa(self, t):
        """Optimal propensity to consume κ̂_t (consumption problems only)."""
        if self.delta != 1:
            raise ValueError("no consumption: kappa is only defined for delta = 1")
        out = 1.0 / self._f(self._tau(t))
        return float(out) if np.ndim(out) == 0 else out

    def consumed(self, t):
        """∫_0^t κ̂_s ds; zero without consumption."""
        t = np.asarray(t, dtype=float)
        if self.delta != 1:
            out = np.zeros_like(t)
        else:
            tau = self._tau(t)
            a = self.a if abs(self.a) >= A_ZERO_THRESHOLD else 0.0
            out = np.log(self._f(self.T)) - np.log(self._f(tau)) - a * t
        return float(out) if np.ndim(out) == 0 else out

    @property
    def u_x0(self) -> float:
        return self.value_at(self.x0)

    def value_at(self, x: float) -> float:
        return self.ell(0.0) * x ** self.p / self.p

    def sample(self, grid: Sequence[float]) -> pd.DataFrame:
        t = np.asarray(grid, dtype=float)
        frame = pd.DataFrame({'t': t, 'ell': self.ell(t)})
        if self.delta == 1:
            frame['kappa'] = self.kappa(t)
        return frame

    def to_dict(self) -> Dict:
        out = {
            'a': self.a,
            'g_star': self.g_star,
            'p': self.p,
            'delta': self.delta,
            'T': self.T,
            'x0': self.x0,
            'ell_0': self.ell(0.0),
            'u_x0': self.u_x0,
        }
        if self.delta == 1:
            out['kappa_0'] = self.kappa(0.0)
        return out


def build_curves(g_star: float, p: float, delta: int, T: float, x0: float = 1.0) -> SolutionCurves:
    """
    Build the solution curves from the optimal value g*.

    Raises:
        ValueError: g* not finite or parameters out of range
    """
    if not math.isfinite(g_star):
        raise ValueError(f"g* must be finite, got {g_star}")
    if p == 0 or not p < 1:
        raise ValueError(f"p must lie in (-inf, 0) or (0, 1), got {p}")
    if delta not in (0, 1):
        raise ValueError(f"delta must be 0 or 1, got {delta}")
    if not T > 0 or not x0 > 0:
        raise ValueError("T and x0 must be positive")
    curves = SolutionCurves(g_star=float(g_star), p=float(p), delta=int(delta), T=float(T), x0=float(x0))
    logger.info(f"Curves: a = {curves.a:.12g}, ell_0 = {curves.ell(0.0):.12g}, u(x0) = {curves.u_x0:.12g}")
    return curves


def verify_bellman_ode(curves: SolutionCurves, g_star: Optional[float] = None, p: Optional[float] = None,
                       delta: Optional[int] = None, points: int = 201) -> float:
    """
    Integrate dℓ/dt = δ(p-1)ℓ^{p/(p-1)} - p·g*·ℓ backward from ℓ_T = 1 and
    return the largest deviation from the closed form on a uniform grid.
    """
    g_star = curves.g_star if g_star is None else g_star
    p = curves.p if p is None else p
    delta = curves.delta if delta is None else delta

    def rhs(t, ell):
        return delta * (p - 1.0) * ell ** (p / (p - 1.0)) - p * g_star * ell

    grid = np.linspace(curves.T, 0.0, points)
    solution = solve_ivp(rhs, (curves.T, 0.0), [1.0], method="DOP853", t_eval=grid, rtol=1e-12, atol=1e-14)
    if not solution.success:
        logger.warning(f"Bellman ODE integration failed: {solution.message}")
        return math.inf
    residual = float(np.max(np.abs(solution.y[0] - curves.ell(grid))))
    logger.debug(f"Bellman ODE residual {residual:.3e}")
    return residual
