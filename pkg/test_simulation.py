"""
Tests for path simulation, wealth, expected utility and verification.
"""
import math

import numpy as np
import pytest

from geometry.constraints import Box, Reals
from geometry.natural import natural_constraints
from market.densities import CgmyDensity
from market.levy import JumpMeasure, LevyTriplet
from market.problem import ProblemSpec
from simulation.paths import block_generator, simulate_paths
from simulation.wealth import (
    density_terminal,
    expected_utility,
    jump_compensator,
    perturbation_panel,
    verification_test,
    wealth_paths,
)
from solver.curves import build_curves
from solver.optimizer import maximize_convex
from solver.qmeasure import q_optimal_exists
from utils.errors import InfiniteActivity


def test_same_seed_same_paths(compound_poisson):
    first = simulate_paths(compound_poisson, 1.0, 300, grid_steps=5, seed=11)
    second = simulate_paths(compound_poisson, 1.0, 300, grid_steps=5, seed=11)
    np.testing.assert_array_equal(first.returns(), second.returns())
    other = simulate_paths(compound_poisson, 1.0, 300, grid_steps=5, seed=12)
    assert not np.array_equal(first.returns(), other.returns())


def test_blocks_do_not_depend_on_path_count(dense_near_minus_one):
    small = simulate_paths(dense_near_minus_one, 1.0, 4096, grid_steps=4, seed=5)
    large = simulate_paths(dense_near_minus_one, 1.0, 5000, grid_steps=4, seed=5)
    np.testing.assert_array_equal(large.gaussian[:4096], small.gaussian)
    np.testing.assert_array_equal(large.jump_counts()[:4096], small.jump_counts())
    np.testing.assert_array_equal(large.returns()[:4096], small.returns())


def test_block_generator_is_keyed():
    a = block_generator(1, 0).random(4)
    np.testing.assert_array_equal(a, block_generator(1, 0).random(4))
    assert not np.array_equal(a, block_generator(1, 1).random(4))


def test_infinite_activity_is_rejected():
    part = CgmyDensity(1.0, 5.0, 5.0, 0.5, direction=[1.0], support=(-np.inf, np.inf))
    triplet = LevyTriplet(b=[0.0], c=[[0.0]], jumps=JumpMeasure(densities=[part]))
    with pytest.raises(InfiniteActivity):
        simulate_paths(triplet, 1.0, 10)


def test_returns_start_at_zero(merton):
    batch = simulate_paths(merton, 2.0, 50, grid_steps=8, seed=0)
    assert batch.T == 2.0
    np.testing.assert_array_equal(batch.returns()[:, 0, :], 0.0)


def test_default_absorbs_wealth(default_atom):
    batch = simulate_paths(default_atom, 1.0, 3000, grid_steps=4, seed=2)
    wealth = wealth_paths(batch, [1.0])
    defaulted = batch.jump_counts() > 0
    assert defaulted.any()
    np.testing.assert_array_equal(wealth.absorbed, defaulted)
    assert np.all(wealth.terminal[defaulted] == 0.0)
    assert np.all(wealth.terminal[~defaulted] > 0.0)
    estimate = expected_utility(batch, [1.0], None, ProblemSpec(p=-1.0))
    assert estimate.mean == -math.inf
    assert estimate.absorbed == int(defaulted.sum())


def test_pure_drift_wealth_is_exact():
    triplet = LevyTriplet(b=[0.05], c=[[0.0]])
    batch = simulate_paths(triplet, 1.0, 3, grid_steps=4, seed=0)
    wealth = wealth_paths(batch, [2.0], x0=3.0)
    np.testing.assert_allclose(wealth.values, 3.0 * np.exp(0.1 * batch.grid)[None, :].repeat(3, axis=0))


def test_consumption_lowers_wealth(merton):
    batch = simulate_paths(merton, 1.0, 10, grid_steps=4, seed=0)
    curves = build_curves(0.16, 0.5, 1, 1.0)
    plain = wealth_paths(batch, [4.0])
    consuming = wealth_paths(batch, [4.0], curves)
    np.testing.assert_allclose(consuming.values, plain.values * np.exp(-curves.consumed(batch.grid))[None, :])


def test_jump_compensator(compound_poisson):
    assert jump_compensator(compound_poisson, lambda u: (1.0 + u) ** 0.5, [1.125]) == pytest.approx(0.25)


@pytest.mark.parametrize("fixture", ["merton", "compound_poisson"])
def test_expected_utility_matches_value(request, fixture):
    triplet = request.getfixturevalue(fixture)
    solution = maximize_convex(triplet, Reals(1), 0.5)
    curves = build_curves(solution.g_star, 0.5, 0, 1.0)
    batch = simulate_paths(triplet, 1.0, 20000, grid_steps=10, seed=7)
    estimate = expected_utility(batch, solution.pi_hat, curves, ProblemSpec(p=0.5))
    assert abs(estimate.mean - curves.u_x0) <= 4.0 * estimate.se
    assert estimate.to_dict()['n_paths'] == 20000


def test_verification_passes_for_the_optimum(compound_poisson):
    problem = ProblemSpec(p=0.5)
    solution = maximize_convex(compound_poisson, Reals(1), 0.5)
    curves = build_curves(solution.g_star, 0.5, 0, 1.0)
    batch = simulate_paths(compound_poisson, 1.0, 20000, grid_steps=10, seed=3)
    report = verification_test(batch, solution, curves, problem, n_sigma=4.0)
    assert [check['name'] for check in report.checks] == ["Gamma_T", "E(Psi)_T"]
    assert report.passed


def test_density_has_unit_mean(merton):
    solution = maximize_convex(merton, Reals(1), 0.5)
    report = q_optimal_exists(merton, 0.5, solution, ProblemSpec(p=0.5))
    batch = simulate_paths(merton, 1.0, 20000, grid_steps=10, seed=9)
    density = density_terminal(batch, report)
    assert abs(density.mean() - 1.0) <= 4.0 * density.std(ddof=1) / math.sqrt(density.size)


def test_perturbation_panel_is_feasible_and_deterministic(default_atom):
    C = Box([0.0], [1.0])
    natural = natural_constraints(default_atom)
    panel = perturbation_panel([0.85], n=10, seed=4, C=C, natural=natural)
    assert len(panel) == 10
    assert all(C.contains(y) and natural.strictly_admissible(y) for y in panel)
    again = perturbation_panel([0.85], n=10, seed=4, C=C, natural=natural)
    np.testing.assert_array_equal(np.vstack(panel), np.vstack(again))


@pytest.mark.slow
def test_verification_with_consumption(corpus):
    model = corpus("merton_box")
    solution = maximize_convex(model.triplet, model.problem.constraints, model.problem.p)
    curves = build_curves(solution.g_star, model.problem.p, model.problem.delta, model.problem.T)
    batch = simulate_paths(model.triplet, model.problem.T, 100000, grid_steps=100, seed=7)
    report = verification_test(batch, solution, curves, model.problem)
    assert report.passed
    estimate = expected_utility(batch, solution.pi_hat, curves, model.problem)
    assert abs(estimate.mean - curves.u_x0) <= 3.0 * estimate.se + 1e-3 * abs(curves.u_x0)
