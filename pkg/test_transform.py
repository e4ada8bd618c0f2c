"""
Tests for the model transformation R -> ΛR.
"""
import numpy as np
import pytest

from geometry.constraints import Box, Reals
from market.levy import LevyTriplet, asset_jump_floor
from simulation.paths import simulate_paths
from simulation.wealth import wealth_paths
from solver.objective import GObjective
from solver.transform import build_transform, map_portfolio_back, transform_triplet
from utils.errors import DomainError


@pytest.fixture
def atom_transform(default_atom):
    return build_transform(default_atom, Box([0.0], [1.0]))


def test_defaultable_asset_is_halved(atom_transform):
    np.testing.assert_allclose(atom_transform.Lambda, [[0.5]])
    assert atom_transform.untradable == []
    assert atom_transform.C_tilde.contains([2.0])
    assert not atom_transform.C_tilde.contains([2.1])
    assert not atom_transform.C_tilde.contains([-0.1])


def test_transformed_asset_cannot_default(default_atom, atom_transform):
    transformed = transform_triplet(default_atom, atom_transform.Lambda)
    assert asset_jump_floor(transformed, 0) == pytest.approx(-0.5)
    np.testing.assert_allclose(transformed.b, [0.025])
    np.testing.assert_allclose(transformed.c, [[0.01]])


@pytest.mark.parametrize("z", [0.0, 0.4, 1.0, 1.7, 2.0])
def test_objective_is_invariant(default_atom, atom_transform, z):
    transformed = transform_triplet(default_atom, atom_transform.Lambda)
    original = GObjective(default_atom, 0.5).value(atom_transform.map_portfolio_back([z])).value
    assert GObjective(transformed, 0.5).value([z]).value == pytest.approx(original, rel=1e-12, abs=1e-14)


def test_density_cutoff_shift_keeps_objective(dense_near_minus_one):
    transformed = transform_triplet(dense_near_minus_one, [[0.5]])
    for z in (0.3, 1.0, 1.9):
        original = GObjective(dense_near_minus_one, 0.5).value([0.5 * z]).value
        assert GObjective(transformed, 0.5).value([z]).value == pytest.approx(original, rel=1e-8, abs=1e-10)


def test_map_back_outside_transformed_set(atom_transform):
    with pytest.raises(DomainError):
        atom_transform.map_portfolio_back([3.0])
    np.testing.assert_allclose(map_portfolio_back([1.7], atom_transform), [0.85])
    np.testing.assert_allclose(atom_transform.map_portfolio_forward([0.85]), [1.7])


def test_no_transform_needed_without_atoms(dense_near_minus_one):
    transform = build_transform(dense_near_minus_one, Box([0.0], [1.0]))
    np.testing.assert_allclose(transform.Lambda, [[1.0]])


def test_unconstrained_diffusion_keeps_identity(merton):
    transform = build_transform(merton, Reals(1))
    np.testing.assert_allclose(transform.Lambda, [[1.0]])
    assert transform.C_tilde.contains([100.0])


def test_untradable_component():
    triplet = LevyTriplet(b=[0.05], c=[[0.04]])
    transform = build_transform(triplet, Box([0.0], [0.0]))
    assert transform.untradable == [0]
    np.testing.assert_allclose(transform.Lambda, [[0.0]])
    assert transform.to_dict()['untradable'] == [0]


def test_frozen_first_component_zeroes_first_row():
    triplet = LevyTriplet(b=[0.05, 0.03], c=[[0.04, 0.0], [0.0, 0.04]])
    transform = build_transform(triplet, Box([0.0, 0.0], [0.0, 1.0]))
    assert transform.untradable == [0]
    np.testing.assert_array_equal(transform.Lambda, [[0.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(transform.steps[0], [0.0, 0.0])


def test_wealth_is_the_same_in_both_coordinates(default_atom, atom_transform):
    batch = simulate_paths(default_atom, T=1.0, n=500, grid_steps=10, seed=3)
    mapped = batch.mapped(atom_transform.Lambda)
    original = wealth_paths(batch, [0.85])
    transformed = wealth_paths(mapped, [1.7])
    np.testing.assert_allclose(transformed.values, original.values, rtol=1e-12)
    np.testing.assert_array_equal(transformed.absorbed, original.absorbed)
