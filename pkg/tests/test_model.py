import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wva.meter import MOMENTUM, POSITION, GaussianMeter, TabulatedMeter
from wva.model import (FAIL, PASS, InteractionConfig, ModelError, QubitAngles, SystemEnsemble,
                       aav_density, aav_validity, branch_density, exact_wva_density,
                       lambda_star, postselection_probability, standard_density, weak_value)
from wva.numerics import Grid, central_derivative, integrate


def random_ensemble(rng, d):
    lam = rng.normal(size=d) * rng.uniform(0.5, 3)
    pre = rng.normal(size=d) + 1j * rng.normal(size=d)
    post = rng.normal(size=d) + 1j * rng.normal(size=d)
    return SystemEnsemble(lam, pre / np.linalg.norm(pre), post / np.linalg.norm(post))


# ------------------------------------------------------------------ meters

def test_gaussian_meter_is_normalised_and_has_expected_width():
    m = GaussianMeter(1.7, center=0.4)
    lo, hi = m.support()
    assert integrate(m.prob, lo, hi, tol=1e-14).value == pytest.approx(1.0, abs=1e-12)
    var = integrate(lambda s: (s - 0.4) ** 2 * m.prob(s), lo, hi, tol=1e-14).value
    assert math.sqrt(var) == pytest.approx(1.7, rel=1e-10)


def test_gaussian_meter_fourier_pair_saturates_uncertainty():
    m = GaussianMeter(0.8)
    k = m.fourier()
    assert k.representation == MOMENTUM
    assert k.width * m.width == pytest.approx(0.5)
    assert k.fourier() == m


def test_gaussian_overlap_in_both_representations():
    w = 1.3
    x = GaussianMeter(w)
    d = 0.9
    direct = integrate(lambda s: x.amplitude(s) * x.amplitude(s - d), -20, 20, tol=1e-14).value
    assert complex(x.overlap(d)) == pytest.approx(direct, abs=1e-13)
    k = GaussianMeter(0.4, representation=MOMENTUM)
    re = integrate(lambda s: k.prob(s) * np.cos(s * d), -10, 10, tol=1e-14).value
    im = integrate(lambda s: -k.prob(s) * np.sin(s * d), -10, 10, tol=1e-14).value
    assert complex(k.overlap(d)) == pytest.approx(complex(re, im), abs=1e-13)


def test_tabulated_meter_matches_gaussian():
    grid = Grid.centered(15.0, 3001)
    g = GaussianMeter(1.1)
    t = TabulatedMeter.from_function(g.amplitude, grid)
    s = np.linspace(-4, 4, 37)
    assert np.max(np.abs(t.prob(s) - g.prob(s))) < 1e-8
    assert t.width == pytest.approx(1.1, rel=1e-8)
    assert np.asarray(t.overlap(0.7)).item() == pytest.approx(complex(g.overlap(0.7)), abs=1e-9)
    assert np.asarray(t.d_overlap(0.7)).item() == pytest.approx(complex(g.d_overlap(0.7)), abs=1e-8)


def test_tabulated_meter_fourier_roundtrip():
    grid = Grid.centered(60.0, 4096)
    g = GaussianMeter(0.9)
    t = TabulatedMeter.from_function(g.amplitude, grid)
    k = t.fourier()
    assert k.width == pytest.approx(1 / (2 * 0.9), rel=1e-7)
    back = k.fourier()
    s = np.linspace(-3, 3, 13)
    assert np.max(np.abs(back.prob(s) - g.prob(s))) < 1e-7


def test_tabulated_meter_rejects_unnormalised_and_complex_position_amplitudes():
    grid = Grid.centered(10.0, 501)
    with pytest.raises(ValueError, match="not normalised"):
        TabulatedMeter(grid, 2 * np.exp(-grid.values ** 2))
    with pytest.raises(ValueError, match="must be real"):
        TabulatedMeter(grid, (1 + 1j) * np.exp(-grid.values ** 2), normalize=True)


# ---------------------------------------------------------------- ensembles

def test_ensemble_validation():
    with pytest.raises(ModelError):
        SystemEnsemble([1.0, -1.0], [1.0, 1.0], [1.0, 0.0])
    with pytest.raises(ModelError):
        SystemEnsemble([1.0], [1.0], [1.0])


def test_lambda_star_prefers_largest_square_then_positive():
    assert lambda_star([0.5, -2.0, 1.0]) == -2.0
    assert lambda_star([1.0, -1.0]) == 1.0
    assert lambda_star([-3.0, 3.0, 0.0]) == 3.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, math.pi - 0.01), st.floats(0.0, 2 * math.pi))
def test_real_family_weak_value(ti, tf):
    sys = QubitAngles.real(ti, tf).ensemble()
    overlap = math.cos((tf - ti) / 2)
    if abs(overlap) < 1e-6:
        return
    expected = math.cos((ti + tf) / 2) / overlap
    assert weak_value(sys) == pytest.approx(expected, rel=1e-10, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3.0, 3.0))
def test_imaginary_family_weak_value(dphi):
    sys = QubitAngles.imaginary(dphi).ensemble()
    aw = weak_value(sys)
    assert aw.real == pytest.approx(0.0, abs=1e-12)
    assert aw.imag == pytest.approx(-math.tan(dphi / 2), rel=1e-10, abs=1e-12)


def test_weak_value_undefined_for_orthogonal_states():
    sys = QubitAngles.real(0.0, math.pi).ensemble()
    with pytest.raises(ModelError, match="weak value undefined"):
        weak_value(sys)


def test_interaction_config_strength():
    cfg = InteractionConfig.from_strength(4.0, width_x=0.5)
    assert cfg.g == pytest.approx(1.0)
    assert cfg.strength == pytest.approx(4.0)
    assert cfg.width_k == pytest.approx(1.0)


def test_failed_postselection_weak_values_sum_to_mean_square(rng):
    # sum over a complete postselection basis of q_f |A_w^f|^2 = <A^2>
    for _ in range(50):
        sys = random_ensemble(rng, int(rng.integers(2, 6)))
        total = 0.0
        for post in [sys.post] + list(sys.fail_states()):
            s = sys.with_post(post)
            total += abs(s.overlap) ** 2 * abs(weak_value(s)) ** 2
        assert total == pytest.approx(sys.mean_square, rel=1e-10)


# ------------------------------------------------------------ exact densities

@pytest.mark.parametrize("ti,tf,g", [(0.4, 2.9, 0.3), (1.2, 4.0, 1.5), (2.0, 0.1, 0.05)])
def test_real_family_postselection_probability_closed_form(ti, tf, g):
    w = 0.7
    sys = QubitAngles.real(ti, tf).ensemble()
    G = g * g / (w * w)
    x = 1 + math.cos(ti) * math.cos(tf)
    y = math.sin(ti) * math.sin(tf)
    expected = 0.5 * (x + y * math.exp(-G / 2))
    assert postselection_probability(sys, GaussianMeter(w), g) == pytest.approx(expected, rel=1e-12)


def test_pass_and_fail_masses_sum_to_one(rng):
    for d in (2, 3, 4):
        sys = random_ensemble(rng, d)
        for meter in (GaussianMeter(0.8), GaussianMeter(0.6, representation=MOMENTUM)):
            for g in (0.0, 0.3, 1.7):
                total = (postselection_probability(sys, meter, g, PASS)
                         + postselection_probability(sys, meter, g, FAIL))
                assert total == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("rep", [POSITION, MOMENTUM])
def test_branch_density_mass_and_derivative(rep, rng):
    sys = random_ensemble(rng, 3)
    meter = GaussianMeter(0.9, representation=rep)
    P = branch_density(sys, meter, PASS)
    g = 0.4
    lo, hi = P.domain(g)
    mass = integrate(lambda s: P(s, g), lo, hi, tol=1e-14).value
    assert mass == pytest.approx(P.meta["mass"](g), abs=1e-12)
    s = np.linspace(lo / 3, hi / 3, 11)
    numeric = central_derivative(lambda gg: P(s, gg), g)
    assert np.max(np.abs(P.d_dg(s, g) - numeric)) < 1e-9
    dq = central_derivative(P.meta["mass"], g)
    assert P.meta["d_mass"](g) == pytest.approx(dq, abs=1e-10)


@pytest.mark.parametrize("rep", [POSITION, MOMENTUM])
def test_gaussian_terms_reproduce_branch_density(rep, rng):
    sys = random_ensemble(rng, 3)
    meter = GaussianMeter(1.2, representation=rep)
    P = branch_density(sys, meter, FAIL)
    s = np.linspace(-5, 5, 41)
    for g in (0.0, 0.2, 0.9):
        assert np.max(np.abs(P.terms(s, g) - P(s, g))) < 1e-13
        assert np.max(np.abs(P.terms.d_dg(s, g) - P.d_dg(s, g))) < 1e-12


def test_exact_density_is_normalised_and_rejects_empty_branch():
    sys = QubitAngles.real(1.0, 4.0).ensemble()
    P = exact_wva_density(sys, GaussianMeter(1.0))
    lo, hi = P.domain(0.5)
    assert integrate(lambda s: P(s, 0.5), lo, hi, tol=1e-14).value == pytest.approx(1.0, abs=1e-12)
    orth = QubitAngles.real(0.0, math.pi).ensemble()
    Q = exact_wva_density(orth, GaussianMeter(1.0))
    with pytest.raises(ModelError, match="empty branch"):
        Q(np.array([0.0]), 0.3)


def test_exact_density_with_tabulated_meter_matches_gaussian():
    grid = Grid.centered(16.0, 3001)
    t = TabulatedMeter.from_function(GaussianMeter(1.0).amplitude, grid)
    sys = QubitAngles.real(0.7, 3.6).ensemble()
    a = exact_wva_density(sys, t)
    b = exact_wva_density(sys, GaussianMeter(1.0))
    s = np.linspace(-4, 4, 17)
    assert np.max(np.abs(a(s, 0.6) - b(s, 0.6))) < 1e-7


def test_exact_density_approaches_aav_shift_for_small_g():
    sys = QubitAngles.real(1.0, 3.8).ensemble()
    meter = GaussianMeter(1.0)
    g = 1e-4
    P = exact_wva_density(sys, meter)
    A = aav_density(sys, meter, "real")
    lo, hi = P.domain(g)
    mean = integrate(lambda s: s * P(s, g), lo, hi, tol=1e-15).value
    assert mean / g == pytest.approx(weak_value(sys).real, rel=1e-4)
    assert A.velocity == pytest.approx(weak_value(sys).real)
    assert aav_validity(sys, meter, g) < 1e-2


def test_imaginary_aav_velocity_uses_momentum_width():
    sys = QubitAngles.imaginary(2.0).ensemble()
    meter = GaussianMeter(0.5)  # momentum spread 1
    A = aav_density(sys, meter, "imaginary")
    assert A.meta["representation"] == MOMENTUM
    assert A.velocity == pytest.approx(2 * 1.0 ** 2 * weak_value(sys).imag)


def test_standard_density_filtered_and_mixture():
    sys = SystemEnsemble([2.0, -1.0, 0.5], [0.6, 0.8, 0.0], [1.0, 0.0, 0.0])
    meter = GaussianMeter(1.0)
    P = standard_density(sys, meter)
    assert P.velocity == 2.0
    M = standard_density(sys, meter, filtered=False)
    s = np.linspace(-5, 5, 21)
    expected = 0.36 * meter.prob(s - 2 * 0.3) + 0.64 * meter.prob(s + 0.3)
    assert np.max(np.abs(M(s, 0.3) - expected)) < 1e-15
