"""
Exact simulation of finite-activity Lévy return paths.

R_t = (b - ∫h dF)·t + R^c_t + Σ_{s<=t} ΔR_s, with Gaussian increments of R^c
on the time grid and jump times/marks drawn exactly per component of F.
Random numbers come from Philox streams keyed by (seed, block), one block per
fixed number of paths, so results do not depend on how blocks are scheduled.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from market.levy import LevyTriplet, integrate_cutoff, total_activity
from utils.errors import InfiniteActivity

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Counter-based generator for one block of paths."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, block], dtype=np.uint64)))


@dataclass(frozen=True, eq=False)
class PathBatch:
    """
    Simulated paths of R on a grid.

    Attributes:
        grid: Time points 0 = t_0 < ... < t_m = T
        drift: b - ∫h dF (drift between jumps)
        c: Covariance of R^c
        gaussian: Increments of R^c, shape (n, m, d)
        jump_path, jump_time, jump_mark: Jumps of all paths, sorted by path then time
        seed: Seed of the Philox streams
        triplet: Model the batch was drawn from
    """

    grid: np.ndarray
    drift: np.ndarray
    c: np.ndarray
    gaussian: np.ndarray
    jump_path: np.ndarray
    jump_time: np.ndarray
    jump_mark: np.ndarray
    seed: int
    triplet: LevyTriplet

    @property
    def n_paths(self) -> int:
        return self.gaussian.shape[0]

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    def continuous_part(self) -> np.ndarray:
        """R^c on the grid, shape (n, m+1, d)."""
        n, _, d = self.gaussian.shape
        return np.concatenate([np.zeros((n, 1, d)), np.cumsum(self.gaussian, axis=1)], axis=1)

    def jump_grid_index(self) -> np.ndarray:
        """First grid index at or after each jump time."""
        return np.searchsorted(self.grid, self.jump_time, side="left")

    def returns(self) -> np.ndarray:
        """R on the grid, shape (n, m+1, d)."""
        values = self.grid[None, :, None] * self.drift[None, None, :] + self.continuous_part()
        if self.jump_time.size:
            bumps = np.zeros((self.n_paths, self.grid.size + 1, self.dim))
            np.add.at(bumps, (self.jump_path, self.jump_grid_index()), self.jump_mark)
            values = values + np.cumsum(bumps, axis=1)[:, :-1, :]
        return values

    def jump_counts(self) -> np.ndarray:
        return np.bincount(self.jump_path, minlength=self.n_paths)

    def mapped(self, Lambda) -> "PathBatch":
        """Paths of ΛR from the same draws."""
        from solver.transform import transform_triplet

        L = np.atleast_2d(np.asarray(Lambda, dtype=float))
        return replace(
            self,
            drift=L @ self.drift,
            c=L @ self.c @ L.T,
            gaussian=self.gaussian @ L.T,
            jump_mark=self.jump_mark @ L.T if self.jump_mark.size else np.zeros((0, L.shape[0])),
            triplet=transform_triplet(self.triplet, L),
        )


def _gaussian_factor(c: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (c + c.T))
    return V * np.sqrt(np.maximum(w, 0.0))


def _components(triplet: LevyTriplet) -> List[Tuple[float, object]]:
    """(intensity, sampler) per atom and density part."""
    out = []
    for atom in triplet.jumps.atoms:
        out.append((atom.lam, atom))
    for part in triplet.jumps.densities:
        mass = part.mass()
        if not math.isfinite(mass):
            raise InfiniteActivity(f"{part.kind} density has infinite mass; truncate small jumps before simulating")
        out.append((mass, part))
    return out


def simulate_paths(triplet: LevyTriplet, T: float, n: int, grid_steps: int = 50, seed: int = 0,
                   block_size: int = BLOCK_SIZE) -> PathBatch:
    """
    Simulate n paths of R on a uniform grid with grid_steps steps.

    Raises:
        InfiniteActivity: the jump measure has infinite mass
    """
    if n < 1 or grid_steps < 1 or not T > 0:
        raise ValueError("n, grid_steps and T must be positive")
    if math.isinf(total_activity(triplet)):
        raise InfiniteActivity("jump measure has infinite activity; truncate small jumps before simulating")
    d = triplet.dim
    grid = np.linspace(0.0, T, grid_steps + 1)
    dt = T / grid_steps
    factor = _gaussian_factor(triplet.c)
    drift = triplet.b - integrate_cutoff(triplet)
    components = _components(triplet)

    gaussian = np.empty((n, grid_steps, d))
    paths, times, marks = [], [], []
    for block, start in enumerate(range(0, n, block_size)):
        size = min(block_size, n - start)
        rng = block_generator(seed, block)
        normals = rng.standard_normal((size, grid_steps, d))
        gaussian[start:start + size] = math.sqrt(dt) * normals @ factor.T
        for intensity, source in components:
            counts = rng.poisson(intensity * T, size)
            total = int(counts.sum())
            if total == 0:
                continue
            paths.append(start + np.repeat(np.arange(size), counts))
            times.append(rng.uniform(0.0, T, total))
            if hasattr(source, 'lam'):
                marks.append(np.tile(source.x, (total, 1)))
            else:
                marks.append(source.sample(rng, total)[:, None] * source.direction[None, :])

    if paths:
        jump_path = np.concatenate(paths)
        jump_time = np.concatenate(times)
        jump_mark = np.vstack(marks)
        order = np.lexsort((jump_time, jump_path))
        jump_path, jump_time, jump_mark = jump_path[order], jump_time[order], jump_mark[order]
    else:
        jump_path = np.zeros(0, dtype=int)
        jump_time = np.zeros(0)
        jump_mark = np.zeros((0, d))
    logger.info(f"Simulated {n} paths on {grid_steps} steps with {jump_time.size} jumps (seed {seed})")
    return PathBatch(grid=grid, drift=drift, c=np.array(triplet.c, dtype=float), gaussian=gaussian,
                     jump_path=jump_path, jump_time=jump_time, jump_mark=jump_mark, seed=seed, triplet=triplet)
