import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wva.numerics import (Grid, NumericalError, central_derivative, erf, erf_diff,
                          fourier_transform, integrate, inverse_fourier_transform)


def test_integrate_sine_over_half_period():
    res = integrate(np.sin, 0.0, np.pi, tol=1e-13)
    assert res.converged
    assert res.value == pytest.approx(2.0, abs=1e-12)


def test_integrate_gaussian_normalisation():
    f = lambda x: np.exp(-x * x / 2) / math.sqrt(2 * math.pi)
    assert integrate(f, -12, 12, tol=1e-14).value == pytest.approx(1.0, abs=1e-13)


def test_integrate_reversed_limits_flip_sign():
    a = integrate(np.cos, 0.0, 1.0).value
    b = integrate(np.cos, 1.0, 0.0).value
    assert b == pytest.approx(-a, abs=1e-14)


def test_integrate_empty_interval():
    assert integrate(np.cos, 2.0, 2.0).value == 0.0


def test_integrate_relative_tolerance_on_small_integrals():
    f = lambda x: 1e-20 * np.exp(-x * x)
    res = integrate(f, -10, 10, tol=1e-300, rtol=1e-12)
    assert res.value == pytest.approx(1e-20 * math.sqrt(math.pi), rel=1e-11)


def test_integrate_rejects_non_finite_integrand():
    with pytest.raises(NumericalError, match="not finite"):
        integrate(lambda x: np.where(x > 0.5, np.inf, x), 0.0, 1.0)


def test_integrate_needs_a_tolerance():
    with pytest.raises(ValueError):
        integrate(np.cos, 0, 1, tol=0.0, rtol=0.0)


def test_integrate_kink_resolved_adaptively():
    res = integrate(np.abs, -1.0, 2.0, tol=1e-12)
    assert res.value == pytest.approx(2.5, abs=1e-11)


def test_erf_matches_reference_values():
    for x in (0.0, 0.1, 0.5, 1.0, 2.5, 5.0):
        assert erf(x) == pytest.approx(math.erf(x), rel=1e-15, abs=1e-300)


@given(st.floats(min_value=-30, max_value=30, allow_nan=False))
def test_erf_is_odd(x):
    assert erf(-x) == -erf(x)


def test_erf_diff_in_far_tail():
    # both arguments deep in the upper tail: direct subtraction would give 0
    with mpmath.workdps(40):
        exact = float(mpmath.erfc(9) - mpmath.erfc(10))
    assert erf_diff(9.0, 10.0) == pytest.approx(exact, rel=1e-12)
    assert erf_diff(-10.0, -9.0) == pytest.approx(exact, rel=1e-12)


@settings(max_examples=60)
@given(st.floats(-8, 8), st.floats(0.0, 4.0))
def test_erf_diff_agrees_with_mpmath(a, width):
    b = a + width
    with mpmath.workdps(40):
        exact = float(mpmath.erf(b) - mpmath.erf(a))
    assert erf_diff(a, b) == pytest.approx(exact, rel=1e-12, abs=1e-300)


def test_central_derivative_of_sine():
    assert central_derivative(np.sin, 0.3) == pytest.approx(math.cos(0.3), abs=1e-12)


def test_central_derivative_vector_valued():
    d = central_derivative(lambda t: np.array([t ** 2, np.exp(t)]), 1.0)
    assert d == pytest.approx([2.0, math.e], abs=1e-10)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(1.0, 0.0, 100)
    with pytest.raises(ValueError):
        Grid(0.0, 1.0, 4)


def test_fourier_transform_of_gaussian():
    w = 0.8
    grid = Grid.centered(20.0, 2048)
    x = grid.values
    psi = (2 * np.pi * w * w) ** -0.25 * np.exp(-x * x / (4 * w * w))
    k_grid, psi_k = fourier_transform(grid, psi)
    k = k_grid.values
    wk = 1 / (2 * w)
    expected = (2 * np.pi * wk * wk) ** -0.25 * np.exp(-k * k / (4 * wk * wk))
    assert np.max(np.abs(psi_k - expected)) < 1e-10


def test_fourier_transform_of_shifted_gaussian_has_linear_phase():
    grid = Grid.centered(20.0, 2048)
    x = grid.values
    psi = np.pi ** -0.25 * np.exp(-(x - 1.5) ** 2 / 2)
    k_grid, psi_k = fourier_transform(grid, psi)
    k = k_grid.values
    expected = np.pi ** -0.25 * np.exp(-k * k / 2) * np.exp(-1.5j * k)
    assert np.max(np.abs(psi_k - expected)) < 1e-10


def test_fourier_roundtrip_and_parseval():
    grid = Grid.centered(25.0, 4096)
    x = grid.values
    psi = np.exp(-(x - 0.7) ** 2 / 3) * (1 + 0.3 * x)
    k_grid, psi_k = fourier_transform(grid, psi)
    back_grid, back = inverse_fourier_transform(k_grid, psi_k, grid.lo)
    assert back_grid.lo == pytest.approx(grid.lo)
    assert back_grid.spacing == pytest.approx(grid.spacing, rel=1e-12)
    assert np.max(np.abs(back - psi)) < 1e-9
    norm_x = np.sum(np.abs(psi) ** 2) * grid.spacing
    norm_k = np.sum(np.abs(psi_k) ** 2) * k_grid.spacing
    assert norm_k == pytest.approx(norm_x, rel=1e-12)


def test_fourier_transform_detects_truncated_domain():
    grid = Grid.centered(2.0, 256)
    with pytest.raises(NumericalError, match="domain too narrow"):
        fourier_transform(grid, np.exp(-grid.values ** 2 / 8))
