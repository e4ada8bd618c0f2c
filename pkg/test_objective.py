"""
Tests for the objective g, its directional derivative G and derivatives.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from market.densities import ParetoDensity
from market.levy import JumpMeasure, LevyTriplet
from solver.objective import GObjective, eval_G, eval_g, eval_gradient, eval_hessian, values_array
from utils.errors import DomainError, TailDivergence


def pareto_triplet(alpha: float) -> LevyTriplet:
    part = ParetoDensity(alpha, 0.1, direction=[1.0], support=(1.0, np.inf))
    return LevyTriplet(b=[0.05], c=[[0.04]], jumps=JumpMeasure(densities=[part]))


def test_merton_closed_form(merton):
    objective = GObjective(merton, 0.5)
    assert objective.value([4.0]).value == pytest.approx(0.16, abs=1e-14)
    assert objective.value([1.0]).value == pytest.approx(0.07, abs=1e-14)
    assert objective.value([0.0]).value == 0.0


def test_compound_poisson_closed_form(compound_poisson):
    assert eval_g([1.125], compound_poisson, 0.5).value == pytest.approx(0.05, abs=1e-12)
    assert eval_G([0.0], [1.125], compound_poisson, 0.5) == pytest.approx(0.0, abs=1e-12)


def test_directional_derivative_toward_origin(merton):
    # from the box corner pi = 1: G(0, 1) = -(b - (1-p)c)
    assert eval_G([0.0], [1.0], merton, 0.5) == pytest.approx(-0.06, abs=1e-14)


def test_gradient_matches_directional(dense_near_minus_one):
    objective = GObjective(dense_near_minus_one, 0.5)
    y = np.array([0.4])
    grad = objective.gradient(y)
    assert objective.directional(y + 0.5, y) == pytest.approx(0.5 * grad[0], rel=1e-8, abs=1e-10)


def test_gradient_matches_finite_difference(dense_near_minus_one):
    objective = GObjective(dense_near_minus_one, 0.5)
    y, step = 0.4, 1e-5
    numeric = (objective.value([y + step]).value - objective.value([y - step]).value) / (2 * step)
    assert objective.gradient([y])[0] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_hessian_of_diffusion(merton):
    np.testing.assert_allclose(eval_hessian([1.0], merton, 0.5), [[-0.02]])
    np.testing.assert_allclose(eval_gradient([4.0], merton, 0.5), [0.0], atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_concave_on_unit_interval(a, b):
    objective = GObjective(
        LevyTriplet(b=[0.05], c=[[0.04]], jumps=JumpMeasure(densities=[
            ParetoDensity(0.7, 0.1, direction=[1.0], support=(1.0, np.inf)),
        ])),
        0.5,
    )
    mid = objective.value([0.5 * (a + b)]).value
    ends = 0.5 * (objective.value([a]).value + objective.value([b]).value)
    assert mid >= ends - 1e-9


def test_null_investments_do_not_change_g(duplicated):
    objective = GObjective(duplicated, 0.5)
    base = objective.value([1.0, 1.0]).value
    assert objective.value([1.5, 0.5]).value == pytest.approx(base, abs=1e-12)
    assert objective.value([3.0, -1.0]).value == pytest.approx(base, abs=1e-12)


def test_outside_natural_constraints_is_a_domain_error(dense_near_minus_one):
    objective = GObjective(dense_near_minus_one, 0.5)
    with pytest.raises(DomainError):
        objective.value([1.5])
    with pytest.raises(DomainError):
        objective.directional([0.0], [-0.5])


@pytest.mark.parametrize("alpha, finite", [(0.3, False), (0.7, True)])
def test_heavy_tails(alpha, finite):
    value = eval_g([0.5], pareto_triplet(alpha), 0.5)
    assert value.finite is finite
    if not finite:
        assert value.value == math.inf


def test_divergent_tail_in_derivatives():
    triplet = pareto_triplet(0.3)
    assert eval_G([1.0], [0.5], triplet, 0.5) == math.inf
    with pytest.raises(TailDivergence):
        eval_gradient([0.5], triplet, 0.5)


def test_negative_exponent_at_atom_boundary(default_atom):
    value = eval_g([1.0], default_atom, -1.0)
    assert value.value == -math.inf
    assert value.boundary_atoms == [0]
    assert value.to_dict()['value'] == "-inf"


def test_positive_exponent_at_atom_boundary(default_atom):
    objective = GObjective(default_atom, 0.5)
    value = objective.value([1.0])
    assert value.finite
    assert value.boundary_atoms == [0]
    # moving off the boundary gains infinitely fast
    assert objective.directional([0.0], [1.0]) == math.inf


def test_values_on_segment(merton):
    values = values_array(GObjective(merton, 0.5).on_segment([4.0], 5))
    np.testing.assert_allclose(values, [0.0, 0.07, 0.12, 0.15, 0.16], atol=1e-14)


def test_exponent_range_is_checked(merton):
    with pytest.raises(ValueError):
        GObjective(merton, 1.0)
    with pytest.raises(ValueError):
        GObjective(merton, 0.0)
