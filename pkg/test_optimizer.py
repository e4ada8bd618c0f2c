"""
Tests for the reduced problem max g over C ∩ C0, convex and non-convex.
"""
import math

import numpy as np
import pytest

from geometry.constraints import Box, Polyhedron, Reals, SecondOrderCone, StarShapedOracle, Union
from geometry.natural import natural_constraints
from market.problem import ProblemSpec
from solver.nonconvex import check_C3, maximize_nonconvex, nonconvex_validity
from solver.objective import GObjective
from solver.optimizer import (FINITE, INFINITE_VALUE, NUIP_VIOLATED, FeasibleRegion, OptimizerSettings,
                              classify_finiteness, first_order_gap, maximize_convex)
from solver.pipeline import solve_portfolio
from utils.errors import C3Violated, NuipViolated, PreconditionFailed, ProjectionNotClosed


def test_merton_unconstrained(merton):
    solution = maximize_convex(merton, Reals(1), 0.5)
    assert solution.verdict == FINITE
    assert solution.attained
    np.testing.assert_allclose(solution.pi_hat, [4.0], atol=1e-8)
    assert solution.g_star == pytest.approx(0.16, abs=1e-10)
    assert solution.location == "interior"
    assert solution.G_at_zero == pytest.approx(0.0, abs=1e-8)
    assert solution.a == pytest.approx(0.16, abs=1e-10)


def test_merton_box_sits_on_upper_bound(corpus):
    model = corpus("merton_box")
    solution = solve_portfolio(model.triplet, model.problem)
    np.testing.assert_allclose(solution.pi_hat, [1.0], atol=1e-8)
    assert solution.g_star == pytest.approx(0.07, abs=1e-10)
    assert solution.location == "C-boundary"
    assert solution.G_at_zero == pytest.approx(-0.06, abs=1e-8)


def test_compound_poisson(corpus):
    model = corpus("compound_poisson")
    solution = solve_portfolio(model.triplet, model.problem)
    np.testing.assert_allclose(solution.pi_hat, [1.125], atol=1e-7)
    assert solution.g_star == pytest.approx(0.05, abs=1e-10)


def test_matches_grid_search(dense_near_minus_one):
    solution = maximize_convex(dense_near_minus_one, Box([0.0], [1.0]), 0.5)
    objective = GObjective(dense_near_minus_one, 0.5)
    grid = np.linspace(0.0, 1.0, 1001)
    values = np.array([objective.value([y]).value for y in grid])
    assert solution.g_star >= values.max() - 1e-12
    assert abs(solution.pi_hat[0] - grid[np.argmax(values)]) <= 2e-3


def test_duplicated_asset_gets_symmetric_representative(duplicated):
    solution = maximize_convex(duplicated, Reals(2), 0.5)
    assert solution.attained
    assert solution.representative == "minimal_norm"
    assert solution.pi_hat[0] == pytest.approx(solution.pi_hat[1], abs=1e-7)
    shifted = GObjective(duplicated, 0.5).value(solution.pi_hat + np.array([1.0, -1.0])).value
    assert shifted == pytest.approx(solution.g_star, abs=1e-12)


def test_increasing_profit_is_reported(increasing_jump):
    problem = ProblemSpec(p=0.5, constraints=Polyhedron([[-1.0]], [0.0]))
    solution = solve_portfolio(increasing_jump, problem)
    assert solution.verdict == NUIP_VIOLATED
    assert solution.pi_hat is None
    assert math.isnan(solution.g_star)
    np.testing.assert_allclose(solution.witness, [1.0])
    assert solution.to_dict()['g_star'] == "nan"


def test_increasing_profit_raises_in_strict_mode(increasing_jump):
    problem = ProblemSpec(p=0.5, constraints=Polyhedron([[-1.0]], [0.0]))
    with pytest.raises(NuipViolated) as info:
        solve_portfolio(increasing_jump, problem, strict=True)
    np.testing.assert_allclose(info.value.witness, [1.0])


def test_increasing_profit_is_harmless_on_compact_set(increasing_jump):
    solution = maximize_convex(increasing_jump, Box([0.0], [1.0]), 0.5)
    assert solution.verdict == FINITE
    np.testing.assert_allclose(solution.pi_hat, [1.0], atol=1e-8)


@pytest.mark.parametrize("name, verdict", [("pareto_tails_03", INFINITE_VALUE), ("pareto_tails_07", FINITE)])
def test_heavy_tails(corpus, name, verdict):
    model = corpus(name)
    solution = solve_portfolio(model.triplet, model.problem)
    assert solution.verdict == verdict
    if verdict == INFINITE_VALUE:
        assert solution.g_star == math.inf
        assert solution.pi_hat is None
    else:
        assert solution.attained and solution.pi_hat[0] > 0
        gradient = GObjective(model.triplet, 0.5).gradient(solution.pi_hat)
        assert abs(gradient[0]) <= 1e-6


def test_finiteness_classification(corpus, merton):
    assert classify_finiteness(merton, Reals(1), 0.5) == "finite"
    assert classify_finiteness(merton, Reals(1), -2.0) == "finite"
    model = corpus("pareto_tails_03")
    assert classify_finiteness(model.triplet, model.problem.constraints, 0.5) == "infinite"


def test_supremum_not_attained_on_leaning_cone(corpus):
    model = corpus("leaning_cone")
    with pytest.warns(ProjectionNotClosed):
        solution = solve_portfolio(model.triplet, model.problem)
    assert solution.pi_hat is None
    assert not solution.attained
    assert solution.location == "none"
    assert solution.g_star == pytest.approx(1.0, abs=1e-6)
    assert solution.approach is not None
    assert np.linalg.norm(solution.approach) < 10.0


def leaning_region(corpus, radius=10.0):
    model = corpus("leaning_cone")
    natural = natural_constraints(model.triplet)
    region = FeasibleRegion(model.problem.constraints, natural, np.zeros(len(natural.r), dtype=bool), radius=radius)
    return model, region


def test_model_step_leaves_the_cone_apex(corpus):
    _, region = leaning_region(corpus)
    interior = region.interior_point()
    assert interior is not None
    assert interior[2] > np.hypot(interior[0], interior[1])
    # projection of e1 onto the cone around e3
    z = region.model_maximizer(np.zeros(3), np.array([1.0, 0.0, 0.0]), np.eye(3))
    np.testing.assert_allclose(z, [0.5, 0.0, 0.5], atol=1e-6)


def test_first_order_gap_flags_the_apex(corpus):
    model, region = leaning_region(corpus)
    obj = GObjective(model.triplet, model.problem.p)
    assert first_order_gap(obj, region, np.zeros(3)) == pytest.approx(0.25, abs=1e-6)


def test_first_order_gap_vanishes_at_box_maximizer(merton):
    natural = natural_constraints(merton)
    region = FeasibleRegion(Box([0.0], [1.0]), natural, np.zeros(len(natural.r), dtype=bool))
    obj = GObjective(merton, 0.5)
    assert first_order_gap(obj, region, np.array([1.0])) == pytest.approx(0.0, abs=1e-10)
    assert first_order_gap(obj, region, np.array([0.5])) > 1e-4


def test_negative_exponent_boundary_is_avoided(default_atom):
    solution = maximize_convex(default_atom, Box([0.0], [1.0]), -1.0)
    assert solution.attained
    assert solution.pi_hat[0] < 1.0
    assert math.isfinite(solution.g_star)


def test_default_atom_interior_optimum(default_atom):
    solution = maximize_convex(default_atom, Box([0.0], [1.0]), 0.5)
    assert 0.8 < solution.pi_hat[0] < 0.9
    assert solution.location == "interior"


def test_settings_from_mapping():
    settings = OptimizerSettings.from_dict({'max_iter': '50', 'first_radius': 5, 'unknown': 1})
    assert settings.max_iter == 50
    assert settings.first_radius == 5.0
    assert OptimizerSettings.from_dict(None) == OptimizerSettings()


# -- non-convex ----------------------------------------------------------------

def test_union_of_boxes(corpus):
    model = corpus("two_piece_union")
    solution = solve_portfolio(model.triplet, model.problem)
    np.testing.assert_allclose(solution.pi_hat, [1.0], atol=1e-8)
    assert solution.g_star == pytest.approx(0.07, abs=1e-10)
    assert solution.validity['valid']
    assert "compact" in solution.validity['cases']


def test_C3_fails_on_isolated_default_point(default_atom):
    C = Union([Box([0.0], [0.0]), Box([1.0], [1.0])])
    assert not check_C3(C, natural_constraints(default_atom))
    with pytest.raises(C3Violated):
        maximize_nonconvex(default_atom, C, 0.5)


def test_C3_holds_when_pieces_avoid_default(default_atom):
    C = Union([Box([0.0], [0.0]), Box([0.5], [1.0])])
    assert check_C3(C, natural_constraints(default_atom))
    validity = nonconvex_validity(default_atom, C, 0.5)
    assert validity['C3'] and validity['C3_exact']
    assert validity['valid']


def test_star_shaped_oracle(merton):
    oracle = StarShapedOracle(1, lambda y: bool(abs(y[0]) <= 2.0), compact=True)
    solution = maximize_nonconvex(merton, oracle, 0.5)
    np.testing.assert_allclose(solution.pi_hat, [2.0], atol=1e-8)
    assert solution.g_star == pytest.approx(0.12, abs=1e-9)
    assert solution.representative == "as_found"
    assert "star_shaped" in solution.validity['cases']


def test_unbounded_non_star_shaped_set_is_rejected(merton):
    C = Union([Box([0.0], [0.0]), Polyhedron([[-1.0]], [-1.0])])
    with pytest.raises(PreconditionFailed):
        maximize_nonconvex(merton, C, 0.5)
