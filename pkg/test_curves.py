"""
Tests for the opportunity process, the consumption rate and the value.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from solver.curves import build_curves, verify_bellman_ode


def test_consumption_curves_closed_form():
    curves = build_curves(0.16, 0.5, 1, 1.0)
    assert curves.a == pytest.approx(0.16)
    assert curves.kappa(0.0) == pytest.approx(0.44288, abs=1e-5)
    assert curves.ell(0.0) == pytest.approx(1.50265, abs=1e-5)
    assert curves.ell(1.0) == 1.0
    assert curves.kappa(1.0) == 1.0


def test_terminal_wealth_value():
    curves = build_curves(0.16, 0.5, 0, 1.0)
    assert curves.u_x0 == pytest.approx(2.0 * math.exp(0.08), rel=1e-14)
    assert curves.ell(0.5) == pytest.approx(math.exp(0.04), rel=1e-14)
    assert curves.value_at(4.0) == pytest.approx(2.0 * math.exp(0.08) * 2.0, rel=1e-14)


def test_zero_rate_limit():
    curves = build_curves(0.0, 0.5, 1, 2.0)
    assert curves.kappa(0.0) == pytest.approx(1.0 / 3.0)
    assert curves.ell(1.0) == pytest.approx(math.sqrt(2.0))


@pytest.mark.parametrize("g_star, p", [(1.0, -1.0), (0.0, 0.5), (0.16, 0.5), (2.0, 0.5)])
@pytest.mark.parametrize("delta", [0, 1])
def test_bellman_equation(g_star, p, delta):
    curves = build_curves(g_star, p, delta, 1.0)
    assert verify_bellman_ode(curves) <= 1e-8 * max(1.0, curves.ell(0.0))


def test_wrong_curves_fail_bellman():
    curves = build_curves(0.16, 0.5, 1, 1.0)
    assert verify_bellman_ode(curves, g_star=0.2) > 1e-4


def test_kappa_needs_consumption():
    with pytest.raises(ValueError):
        build_curves(0.16, 0.5, 0, 1.0).kappa(0.0)


def test_non_finite_value_is_rejected():
    with pytest.raises(ValueError):
        build_curves(math.inf, 0.5, 0, 1.0)
    with pytest.raises(ValueError):
        build_curves(math.nan, 0.5, 1, 1.0)


def test_time_outside_horizon():
    with pytest.raises(ValueError):
        build_curves(0.16, 0.5, 1, 1.0).ell(1.5)


@pytest.mark.parametrize("g_star", [0.16, 0.0, -0.3])
def test_consumed_matches_quadrature(g_star):
    curves = build_curves(g_star, 0.5, 1, 2.0)
    for t in (0.5, 1.0, 2.0):
        integral, _ = quad(curves.kappa, 0.0, t, epsabs=1e-13, epsrel=1e-12)
        assert curves.consumed(t) == pytest.approx(integral, rel=1e-9, abs=1e-12)
    assert build_curves(g_star, 0.5, 0, 2.0).consumed(1.0) == 0.0


def test_sample_frame():
    frame = build_curves(0.16, 0.5, 1, 1.0).sample(np.linspace(0.0, 1.0, 11))
    assert list(frame.columns) == ['t', 'ell', 'kappa']
    assert len(frame) == 11
    assert frame['kappa'].is_monotonic_increasing
    assert 'kappa' not in build_curves(0.16, 0.5, 0, 1.0).sample([0.0, 1.0]).columns


@settings(max_examples=100, deadline=None)
@given(
    st.floats(-1.0, 5.0),
    st.one_of(st.floats(-3.0, -0.05), st.floats(0.05, 0.9)),
    st.sampled_from([0, 1]),
    st.floats(0.0, 1.0),
)
def test_curves_stay_positive(g_star, p, delta, t):
    curves = build_curves(g_star, p, delta, 1.0)
    assert curves.ell(t) > 0
    if delta == 1:
        assert curves.kappa(t) > 0
