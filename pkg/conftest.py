"""
Shared fixtures: small hand-checkable models and the shipped model corpus.
"""
import logging
from pathlib import Path

import numpy as np
import pytest

from market.densities import ExponentialDensity, UniformDensity
from market.levy import Atom, JumpMeasure, LevyTriplet
from market.loader import load_model

MODELS_DIR = Path(__file__).resolve().parent / "models"


@pytest.fixture(autouse=True)
def quiet_logging():
    logging.getLogger().setLevel(logging.WARNING)
    yield


@pytest.fixture
def corpus():
    """Load a model of the shipped corpus by name."""
    def _load(name: str):
        return load_model(str(MODELS_DIR / f"{name}.yaml"))
    return _load


@pytest.fixture
def merton():
    """b = 0.08, c = 0.04: pi_hat = 4, g* = 0.16 at p = 0.5."""
    return LevyTriplet(b=[0.08], c=[[0.04]])


@pytest.fixture
def compound_poisson():
    """b = 0.1, one atom at 0.5 with rate 1: pi_hat = 1.125, g* = 0.05 at p = 0.5."""
    return LevyTriplet(b=[0.1], c=[[0.0]], jumps=JumpMeasure([Atom([0.5], 1.0)]))


@pytest.fixture
def dense_near_minus_one():
    """Jumps arbitrarily close to -100% and arbitrarily high: C0 = [0, 1]."""
    return LevyTriplet(
        b=[0.05],
        c=[[0.04]],
        jumps=JumpMeasure(densities=[
            UniformDensity(0.5, direction=[1.0], support=(-1.0, -0.5)),
            ExponentialDensity(2.0, 0.5, direction=[1.0], support=(0.5, np.inf)),
        ]),
    )


@pytest.fixture
def duplicated():
    return LevyTriplet(
        b=[0.08, 0.08],
        c=[[0.04, 0.04], [0.04, 0.04]],
        jumps=JumpMeasure([Atom([-0.2, -0.2], 0.5)]),
    )


@pytest.fixture
def increasing_jump():
    """Only upward jumps, drift equal to the compensator: y = 1 is an increasing profit."""
    return LevyTriplet(b=[1.0], c=[[0.0]], jumps=JumpMeasure([Atom([1.0], 1.0)]))


@pytest.fixture
def default_atom():
    """Asset that can lose everything (atom at -1) with an interior optimum on [0, 1]."""
    return LevyTriplet(b=[0.05], c=[[0.04]], jumps=JumpMeasure([Atom([-1.0], 0.02)]))
