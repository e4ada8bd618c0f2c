"""
Tests for the acceptance rules.
"""
import math

import numpy as np
import pytest

from checks.acceptance import AcceptanceChecker, feasible_samples
from geometry.constraints import Box, Reals, Union
from geometry.natural import natural_constraints
from simulation.wealth import UtilityEstimate, VerificationReport
from solver.curves import build_curves
from solver.objective import GObjective
from solver.optimizer import PortfolioSolution, maximize_convex
from solver.qmeasure import QMeasureReport


@pytest.fixture
def checker():
    return AcceptanceChecker({'samples': 20, 'concavity_samples': 20})


def test_defaults():
    checker = AcceptanceChecker()
    assert checker.n_sigma == 3.0
    assert checker.samples == 100
    assert checker.concavity_samples == 1000
    assert AcceptanceChecker({'n_sigma': '4'}).n_sigma == 4.0


def test_feasible_samples_respect_margin(dense_near_minus_one):
    natural = natural_constraints(dense_near_minus_one)
    points = feasible_samples(Reals(1), natural, 30, seed=1, radius=2.0)
    assert len(points) == 30
    assert all(1e-3 <= y[0] <= 1.0 - 1e-3 for y in points)
    again = feasible_samples(Reals(1), natural, 30, seed=1, radius=2.0)
    np.testing.assert_array_equal(np.vstack(points), np.vstack(again))


def test_first_order_at_optimum(checker, dense_near_minus_one):
    C = Box([0.0], [1.0])
    solution = maximize_convex(dense_near_minus_one, C, 0.5)
    objective = GObjective(dense_near_minus_one, 0.5)
    natural = natural_constraints(dense_near_minus_one)
    passed, reason = checker.check_first_order(solution, objective, C, natural)
    assert passed, reason


def test_first_order_detects_wrong_point(checker, merton):
    objective = GObjective(merton, 0.5)
    wrong = PortfolioSolution(p=0.5, pi_hat=np.array([0.0]), g_star=0.0)
    passed, _ = checker.check_first_order(wrong, objective, Box([0.0], [1.0]), natural_constraints(merton))
    assert not passed


def test_first_order_without_maximizer(checker, merton):
    missing = PortfolioSolution(p=0.5, pi_hat=None, g_star=math.inf, verdict="infinite_value")
    passed, reason = checker.check_first_order(missing, GObjective(merton, 0.5), Reals(1), natural_constraints(merton))
    assert not passed and "infinite_value" in reason


def test_first_order_skips_non_convex_sets(checker, merton):
    solution = PortfolioSolution(p=0.5, pi_hat=np.array([1.0]), g_star=0.07)
    union = Union([Box([0.0], [0.0]), Box([0.5], [1.0])])
    passed, _ = checker.check_first_order(solution, GObjective(merton, 0.5), union, natural_constraints(merton))
    assert passed


def test_gradient_and_concavity(checker, dense_near_minus_one):
    objective = GObjective(dense_near_minus_one, 0.5)
    natural = natural_constraints(dense_near_minus_one)
    C = Box([0.0], [1.0])
    passed, reason = checker.check_gradient(objective, C, natural)
    assert passed, reason
    passed, reason = checker.check_concavity(objective, C, natural)
    assert passed, reason


def test_concavity_runs_a_thousand_midpoints_by_default(merton):
    passed, reason = AcceptanceChecker().check_concavity(GObjective(merton, 0.5), Reals(1), natural_constraints(merton))
    assert passed, reason
    assert reason == "1000 midpoint tests passed"


def test_bellman_rule(checker):
    assert checker.check_bellman(build_curves(0.16, 0.5, 1, 1.0))[0]


def test_utility_rule(checker):
    curves = build_curves(0.16, 0.5, 0, 1.0)
    good = UtilityEstimate(mean=curves.u_x0 + 0.001, se=0.001, n_paths=1000)
    bad = UtilityEstimate(mean=curves.u_x0 + 0.01, se=0.001, n_paths=1000)
    assert checker.check_utility(good, curves)[0]
    assert not checker.check_utility(bad, curves)[0]


def test_dominance_rule(checker):
    optimum = UtilityEstimate(mean=2.0, se=0.01, n_paths=1000)
    assert checker.check_dominance(optimum, [UtilityEstimate(2.015, 0.01, 1000)])[0]
    passed, reason = checker.check_dominance(optimum, [UtilityEstimate(1.9, 0.01, 1000),
                                                       UtilityEstimate(2.05, 0.01, 1000)])
    assert not passed and "perturbation 1" in reason


def test_verification_rule(checker):
    report = VerificationReport()
    assert not checker.check_verification(report)[0]
    report.add("Gamma_T", 1.0, 1.0, 0.01, 3.0)
    assert checker.check_verification(report)[0]
    report.add("E(Psi)_T", 1.5, 1.0, 0.01, 3.0)
    passed, reason = checker.check_verification(report)
    assert not passed and "E(Psi)_T" in reason


def test_q_measure_rule(checker):
    absent = QMeasureReport(p=0.5, exists=False, drift_residual=-0.06, pi_hat=np.array([1.0]), tolerance=1e-7)
    assert checker.check_q_measure(absent)[0]
    present = QMeasureReport(p=0.5, exists=True, drift_residual=0.0, pi_hat=np.array([4.0]), tolerance=1e-7,
                             residuals=np.array([1e-9]))
    assert checker.check_q_measure(present)[0]
    present.residuals = np.array([1e-3])
    assert not checker.check_q_measure(present)[0]


def test_density_mass_rule(checker):
    rng = np.random.default_rng(0)
    assert checker.check_density_mass(rng.lognormal(-0.02, 0.2, 10000))[0]
    assert not checker.check_density_mass(np.full(100, 1.5) + rng.normal(0, 0.01, 100))[0]


def test_record_shape():
    entry = AcceptanceChecker.record("bellman_ode", (True, "residual 1e-13"))
    assert entry == {'name': 'bellman_ode', 'passed': True, 'reason': "residual 1e-13"}
