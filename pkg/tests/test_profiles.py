import math

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import quad

from oracles import mp_residual, mp_subsolution, mp_supersolution
from wfde.errors import DegenerateTime, NonpositiveMass, ParameterError
from wfde.params import r_star, validate_parameters
from wfde.profiles import (
    ProfileField,
    SubsolutionSpec,
    SupersolutionSpec,
    barenblatt,
    barenblatt_at,
    barenblatt_spec,
    derive_barenblatt_constants,
    mass_constant,
    minimal_H,
    no_rates_data,
    nonintegrable_range,
    pde_residual,
    reference_mass,
    stationary_profile,
    subsolution,
    supersolution,
    w0_profile,
)

MBAR = math.pi**2 / 4


def weighted_mass(p, func, scale=1.0):
    """Radial quadrature of func against |x|^-gamma dx in the variable x = log(r/scale)."""
    k = p.d - p.gamma
    integrand = lambda x: func(scale * math.exp(x)) * (scale * math.exp(x)) ** k  # noqa: E731
    pieces = [(-80, -5), (-5, 5), (5, 80)]
    return p.sphere_area * sum(quad(integrand, a, b, limit=400, epsrel=1e-13, epsabs=0)[0] for a, b in pieces)


def test_barenblatt_constants_of_unweighted_example(p23):
    b0, b1 = derive_barenblatt_constants(p23)
    assert b1 == pytest.approx(0.25, rel=1e-14)
    assert b0 == pytest.approx(4 * MBAR ** (2 / 3), rel=1e-14)
    assert b0 == pytest.approx(7.30387, abs=1e-5)


def test_reference_mass_of_unweighted_example(p23):
    assert reference_mass(p23) == pytest.approx(MBAR, rel=1e-14)


def test_reference_mass_matches_quadrature_in_weighted_regime(p34):
    oracle = weighted_mass(p34, lambda r: (1 + r**p34.sigma) ** (1 / (p34.m - 1)))
    assert reference_mass(p34) == pytest.approx(oracle, rel=1e-9)


def test_mass_constant_examples(p23):
    assert mass_constant(p23, MBAR) == pytest.approx(1.0, rel=1e-14)
    assert mass_constant(p23, 2 * MBAR) == pytest.approx(2 ** (-2 / 3), rel=1e-14)
    with pytest.raises(NonpositiveMass):
        mass_constant(p23, 0.0)


@pytest.mark.parametrize("M", [0.3, 1.0, 17.0])
def test_stationary_profile_carries_its_mass(p34, M):
    assert weighted_mass(p34, lambda r: stationary_profile(p34, M, r)) == pytest.approx(M, rel=1e-9)


def test_barenblatt_tail_limit(p23):
    spec = barenblatt_spec(p23, MBAR, T=0.5)
    _, b1 = derive_barenblatt_constants(p23)
    q = 1 / (1 - p23.m)
    r = 1e7
    limit = b1**-q * (2.0 + 0.5) ** q
    assert barenblatt(spec, 2.0, r) * r**p23.tail_power == pytest.approx(limit, rel=1e-9)


def test_barenblatt_value_at_origin_decays_with_weighted_dimension(p34):
    M = 2.0
    b0, _ = derive_barenblatt_constants(p34)
    q = 1 / (1 - p34.m)
    for s in (0.1, 1.0, 30.0):
        expected = s ** (q - p34.sigma * p34.theta * q) * M ** (p34.sigma * p34.theta) / b0**q
        assert barenblatt_at(p34, M, s, 0.0) == pytest.approx(expected, rel=1e-12)
        assert barenblatt_at(p34, M, s, 0.0) * s ** (p34.dim_weighted * p34.theta) == pytest.approx(
            barenblatt_at(p34, M, 1.0, 0.0), rel=1e-12)


@pytest.mark.parametrize("t", [0.01, 1.0, 5.0, 100.0, 1e4])
def test_barenblatt_conserves_mass(p34, t):
    spec = barenblatt_spec(p34, 3.0, T=0.0)
    mass = weighted_mass(p34, lambda r: barenblatt(spec, t, r), scale=r_star(t, p34))
    assert mass == pytest.approx(3.0, rel=1e-8)


def test_barenblatt_rejects_degenerate_time(p23):
    spec = barenblatt_spec(p23, MBAR, T=1.0)
    with pytest.raises(DegenerateTime):
        barenblatt(spec, -1.0, 1.0)


def test_barenblatt_solves_the_equation(p34):
    M = 1.7
    r = np.geomspace(0.05, 20, 25)
    res, scale = pde_residual(lambda t, x: barenblatt_at(p34, M, t, x), p34, 2.0, r)
    assert np.max(np.abs(res) / scale) < 1e-8


def test_stationary_profile_basic_shape(p23):
    r = np.geomspace(1e-3, 1e3, 100)
    B = stationary_profile(p23, MBAR, r)
    assert stationary_profile(p23, MBAR, 0.0) == pytest.approx(1.0, rel=1e-14)
    assert np.all(np.diff(B) < 0)
    far = 1e8
    assert stationary_profile(p23, 0.1, far) / stationary_profile(p23, 10.0, far) == pytest.approx(1.0, rel=1e-9)


@pytest.mark.parametrize("p", [validate_parameters(3, 0, 0, 2 / 3), validate_parameters(3, 1, 0, 0.75)])
def test_stationary_profile_is_the_rescaled_shifted_barenblatt(p):
    y = np.geomspace(1e-3, 1e3, 50)
    for t in (0.0, 1.0, 50.0):
        R = r_star(t + 1.0, p)
        v = (R / p.zeta) ** p.dim_weighted * barenblatt_at(p, MBAR, t + 1.0, R * y / p.zeta)
        np.testing.assert_allclose(v, stationary_profile(p, MBAR, y), rtol=1e-10)


def test_profile_field_outer_mass_matches_quadrature(p34):
    f = ProfileField.barenblatt(p34, 2.5, 3.0)
    for R in (0.1, 2.0, 40.0):
        k = p34.d - 1 - p34.gamma
        oracle = p34.sphere_area * quad(lambda r: barenblatt_at(p34, 2.5, 3.0, r) * r**k, R, np.inf,
                                        epsrel=1e-12, limit=200)[0]
        assert f.outer_mass(np.array([R]))[0] == pytest.approx(oracle, rel=1e-8)
    assert f.l1gamma() == pytest.approx(2.5, rel=1e-12)


def test_subsolution_example_value(p23):
    spec = SubsolutionSpec(p23, A=1.0, B=1.0, epsilon=1.0, t0=1.0)
    assert spec.alpha == pytest.approx(2.5)
    assert subsolution(spec, 0.0, 0.0) == pytest.approx(1.0, rel=1e-14)


def test_subsolution_tail_exponent(p23):
    spec = SubsolutionSpec(p23, 1.0, 1.0, 1.0, 1.0)
    # D(t) grows like t^6 here, so later times need the window pushed out past sqrt(D)
    for t, lo in ((0.0, 1e3), (1.0, 1e3), (10.0, 1e5)):
        r = np.geomspace(lo, 1e3 * lo, 60)
        slope = np.polyfit(np.log(r), np.log(subsolution(spec, t, r)), 1)[0]
        assert slope == pytest.approx(-5.0, abs=0.01)


def test_subsolution_ordering(p23):
    spec = SubsolutionSpec(p23, 2.0, 0.5, 1.5, 0.3)
    r = np.geomspace(1e-3, 1e4, 200)
    assert np.all(np.diff(subsolution(spec, 3.0, r)) <= 0)
    assert np.all(np.diff(spec.D(np.linspace(0, 10, 50))) > 0)


def test_subsolution_rejects_epsilon_out_of_range(p23):
    with pytest.raises(ParameterError):
        SubsolutionSpec(p23, 1.0, 1.0, 3.0, 1.0)


def test_subsolution_residual_sign(p23):
    spec = SubsolutionSpec(p23, 1.0, 1.0, 1.0, 1.0)
    v = mp_subsolution(spec)
    for t in (0.5, 2.0, 10.0):
        for r in np.geomspace(1e-2, 1e3, 12):
            res, scale = mp_residual(v, p23, t, r)
            assert res / scale <= 1e-20


def test_minimal_H_example(p23):
    assert minimal_H(p23, 1.0, 1.0, 1.0) == pytest.approx(28 / 9, rel=1e-14)


def test_supersolution_equals_E_at_origin(p23):
    spec = SupersolutionSpec(p23, E=1.3, F=1.0, epsilon=1.0, t0=1.0, H=28 / 9)
    assert np.allclose(supersolution(spec, np.array([0.0, 1.0, 7.0]), 0.0), 1.3)


def test_supersolution_rejects_small_H(p23):
    with pytest.raises(ParameterError, match="admissible"):
        SupersolutionSpec(p23, 1.0, 1.0, 1.0, 1.0, 3.0)


def test_supersolution_residual_sign(p23):
    spec = SupersolutionSpec(p23, 1.0, 1.0, 1.0, 1.0, 28 / 9)
    v = mp_supersolution(spec)
    for t in (0.5, 2.0, 10.0):
        for r in np.geomspace(1e-2, 1e3, 12):
            res, scale = mp_residual(v, p23, t, r)
            assert res / scale >= -1e-20


@pytest.mark.parametrize("eps, label", [(2.0, "integrable-subsolution"), (4.0, "non-integrable-subsolution"),
                                        (5.0, "not-a-subsolution")])
def test_nonintegrable_range_examples(p23, eps, label):
    assert nonintegrable_range(p23, eps) == label


def test_w0_lies_between_the_bracket_at_time_zero(p23):
    sub = SubsolutionSpec(p23, 0.9, 1.0, 2.0, 1.0)
    sup = SupersolutionSpec(p23, 1.1, 1.0, 2.0, 1.0, minimal_H(p23, 1.1, 1.0, 2.0))
    r = np.geomspace(1e-4, 1e8, 500)
    w0 = w0_profile(p23, r)
    assert np.all(subsolution(sub, 0.0, r) <= w0)
    assert np.all(w0 <= supersolution(sup, 0.0, r))


def test_no_rates_data_has_unit_mass_and_positive_lower_rate(p23):
    data = no_rates_data(p23, 0.5)
    # the integrand decays only like r^-1.17, too slowly for quadrature: use the Beta-function
    # closed form of 4 pi A int r^2 (1 + B r^2)^-alpha dr, evaluated independently in mpmath
    with mp.workdps(30):
        alpha = mp.mpf(data.alpha)
        mass = 2 * mp.pi * data.A * mp.mpf(data.B) ** -1.5 * mp.beta(1.5, alpha - 1.5)
    assert float(mass) == pytest.approx(1.0, rel=1e-12)
    assert data.lower_rate > 0
    assert data.growth_exponent == pytest.approx(3.5)
