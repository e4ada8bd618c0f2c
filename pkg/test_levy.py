"""
Tests for Lévy triplets, density parts and model validation.
"""
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from market.densities import CgmyDensity, ParetoDensity, TailModel, UniformDensity
from market.levy import (
    Atom,
    JumpMeasure,
    LevyTriplet,
    asset_jump_floor,
    cutoff,
    integrate_cutoff,
    pth_moment_finite,
    total_activity,
    validate_model,
)
from market.problem import ProblemSpec
from utils.errors import UnboundedSupportWithoutTailModel


def pareto_triplet(alpha: float, tail=None) -> LevyTriplet:
    part = ParetoDensity(alpha, 0.1, direction=[1.0], support=(1.0, np.inf), tail=tail)
    return LevyTriplet(b=[0.05], c=[[0.04]], jumps=JumpMeasure(densities=[part]))


def test_merton_triplet_is_valid(merton):
    report = validate_model(merton)
    assert report.valid
    assert report.to_dict() == {'valid': True, 'violations': []}


def test_non_psd_covariance_is_reported():
    triplet = LevyTriplet(b=[0.0, 0.0], c=[[1.0, 2.0], [2.0, 1.0]])
    report = validate_model(triplet)
    assert not report.valid
    assert any("positive semidefinite" in v for v in report.violations)


def test_asymmetric_covariance_is_reported():
    report = validate_model(LevyTriplet(b=[0.0, 0.0], c=[[1.0, 0.5], [0.0, 1.0]]))
    assert "covariance not symmetric" in report.violations


def test_atom_at_origin_is_reported():
    triplet = LevyTriplet(b=[0.0], c=[[0.0]], jumps=JumpMeasure([Atom([0.0], 1.0)]))
    assert "mass at origin" in validate_model(triplet).violations


def test_dimension_mismatch_is_reported():
    triplet = LevyTriplet(b=[0.0, 0.0], c=[[1.0, 0.0], [0.0, 1.0]], jumps=JumpMeasure([Atom([0.5], 1.0)]))
    report = validate_model(triplet)
    assert any("dimension" in v for v in report.violations)


def test_dense_model_is_valid(dense_near_minus_one):
    assert validate_model(dense_near_minus_one).valid


@pytest.mark.parametrize("alpha, finite", [(0.3, False), (0.7, True)])
def test_pareto_pth_moment(alpha, finite):
    assert pth_moment_finite(pareto_triplet(alpha), 0.5) is finite


def test_unbounded_density_without_tail_raises():
    part = ParetoDensity(0.7, 0.1, direction=[1.0], support=(1.0, np.inf))
    part.tail = None
    triplet = LevyTriplet(b=[0.0], c=[[0.0]], jumps=JumpMeasure(densities=[part]))
    with pytest.raises(UnboundedSupportWithoutTailModel):
        pth_moment_finite(triplet, 0.5)
    assert any("tail model" in v for v in validate_model(triplet).violations)


def test_tail_model_moments():
    assert TailModel("power", 0.7).moment_finite(0.5)
    assert not TailModel("power", 0.3).moment_finite(0.5)
    assert TailModel("exponential", 1.0).moment_finite(10.0)
    with pytest.raises(ValueError):
        TailModel("gaussian", 1.0)


def test_total_activity(compound_poisson):
    assert total_activity(compound_poisson) == pytest.approx(1.0)
    uniform = UniformDensity(2.0, direction=[1.0], support=(-1.0, -0.5))
    triplet = LevyTriplet(b=[0.0], c=[[0.0]], jumps=JumpMeasure([Atom([0.5], 1.0)], [uniform]))
    assert total_activity(triplet) == pytest.approx(2.0)


def test_untruncated_cgmy_has_infinite_activity():
    part = CgmyDensity(1.0, 5.0, 5.0, 0.5, direction=[1.0], support=(-np.inf, np.inf))
    triplet = LevyTriplet(b=[0.0], c=[[0.0]], jumps=JumpMeasure(densities=[part]))
    assert math.isinf(total_activity(triplet))
    assert validate_model(triplet).valid


def test_integrate_cutoff(compound_poisson):
    np.testing.assert_allclose(integrate_cutoff(compound_poisson), [0.5])
    uniform = UniformDensity(1.0, direction=[1.0], support=(-1.0, -0.5))
    triplet = LevyTriplet(b=[0.0], c=[[0.0]], jumps=JumpMeasure(densities=[uniform]))
    # ∫_{-1}^{-0.5} s ds = -0.375
    np.testing.assert_allclose(integrate_cutoff(triplet), [-0.375], rtol=1e-9)


def test_large_atoms_fall_outside_the_cutoff():
    triplet = LevyTriplet(b=[0.0], c=[[0.0]], jumps=JumpMeasure([Atom([2.0], 1.0)]))
    np.testing.assert_allclose(integrate_cutoff(triplet), [0.0])


def test_asset_jump_floor(default_atom, dense_near_minus_one):
    assert asset_jump_floor(default_atom, 0) == -1.0
    assert asset_jump_floor(dense_near_minus_one, 0) == -1.0
    assert asset_jump_floor(LevyTriplet(b=[0.0], c=[[1.0]]), 0) == math.inf


def test_uniform_mass_and_sampling():
    part = UniformDensity(2.0, direction=[1.0], support=(-1.0, -0.5))
    assert part.mass() == pytest.approx(1.0)
    samples = part.sample(np.random.default_rng(1), 1000)
    assert samples.min() >= -1.0 and samples.max() <= -0.5


def test_pareto_samples_stay_in_support():
    part = ParetoDensity(0.7, 0.1, direction=[1.0], support=(1.0, np.inf))
    samples = part.sample(np.random.default_rng(2), 1000)
    assert samples.min() >= 1.0


def test_tilted_density_reweights():
    base = UniformDensity(1.0, direction=[1.0], support=(-0.5, 0.5))
    tilted = base.tilted(1.0, -0.5)
    np.testing.assert_allclose(tilted.pdf([0.0, 0.44]), [1.0, 1.44 ** -0.5])


def test_problem_spec_rejects_bad_exponent():
    with pytest.raises(ValueError):
        ProblemSpec(p=0.0)
    with pytest.raises(ValueError):
        ProblemSpec(p=1.0)
    with pytest.raises(ValueError):
        ProblemSpec(p=0.5, delta=2)
    assert ProblemSpec(p=-1.0).q == pytest.approx(0.5)


@given(st.floats(min_value=-5.0, max_value=5.0, allow_nan=False))
def test_cutoff_truncates_large_jumps(x):
    value = cutoff(np.array([x]))
    assert value[0] == (x if abs(x) <= 1.0 else 0.0)
