import math

import mpmath as mp
import numpy as np
import pytest

from wfde.errors import EarlyTime, InsufficientTailData, NotInX, ParameterError, ZeroMass
from wfde.harnack import (
    KappaConstants,
    ball_mass,
    boundary_harnack,
    calibrate_smoothing_constant,
    cone_constant,
    cone_harnack,
    cone_radius,
    cone_time_threshold,
    fit_outer_mass_constants,
    half_mass_radius,
    lower_bound_params,
    lower_constant,
    outer_mass_inequality,
    t_star,
    tail_limits,
    upper_bound_params,
    verify_sandwich,
)
from wfde.profiles import (
    ProfileField,
    SubsolutionSpec,
    barenblatt_at,
    derive_barenblatt_constants,
    subsolution,
    w0_profile,
)
from wfde.solver import Trajectory, build_grid, project_field, solve
from wfde.tailspace import RadialField, indicator_field, with_tail

K = KappaConstants()


def exact_trajectory(p, M, shift, times, grid):
    """Cell-centre samples of B(t + shift; M), packaged as a trajectory."""
    states = [barenblatt_at(p, M, t + shift, grid.centers) for t in times]
    return Trajectory(p, grid, np.array(times, dtype=float), states, [], meta={"initial_mass": M})


@pytest.fixture(scope="module")
def ball_run():
    from wfde.params import validate_parameters

    p = validate_parameters(3, 0.0, 0.0, 2 / 3)
    grid = build_grid(p, 1e-4, 1e8, 32)
    u0 = indicator_field(p)
    outs = [0.0] + list(np.geomspace(0.1, 10.0, 11))
    traj = solve(p, grid, project_field(grid, u0), 10.0, outs, dt_rel=1e-2, t_ref=1e-3)
    return p, u0, traj


# -- closed formulas ----------------------------------------------------------------


def test_t_star_of_unit_ball_indicator(p23):
    assert t_star(indicator_field(p23), 1.0, K) == pytest.approx((4 * math.pi / 3) ** (1 / 3), rel=1e-10)
    assert t_star(indicator_field(p23), 1.0, K) == pytest.approx(1.6119919540164689, rel=1e-12)


def test_t_star_scaling_and_monotonicity(p23, p34):
    f = indicator_field(p34, 0.5)
    assert t_star(f, 2.0, K) / t_star(f, 1.0, K) == pytest.approx(2 ** (1 / p34.theta), rel=1e-10)
    radii = np.geomspace(0.05, 5.0, 30)
    values = [t_star(indicator_field(p23), R, K) for R in radii]
    assert np.all(np.diff(values) >= 0)
    assert t_star(f, 1.0, KappaConstants(kappa_star=3.0)) == pytest.approx(3 * t_star(f, 1.0, K))


def test_t_star_errors(p23):
    hollow = RadialField(p23, [1.0, 2.0, 3.0], [0.0, 1.0, 0.0])
    with pytest.raises(ZeroMass):
        t_star(hollow, 0.5, K)
    with pytest.raises(ParameterError):
        t_star(hollow, 0.0, K)


def test_lower_constant_frozen_and_recomputed(p23):
    """All kappas one: the value against an independent high-precision evaluation."""
    mp.mp.dps = 30
    b0 = 4 * (mp.pi**2 / 4) ** (mp.mpf(2) / 3)
    b1 = mp.mpf(1) / 4
    theta, sigma, q = mp.mpf(1), mp.mpf(2), mp.mpf(3)
    outside = (theta * b0**2 / (4 * b1)) ** q * sigma ** (2 * q) / (3 * mp.mpf(1) / 3) ** 3
    inside = mp.mpf(1) / 8
    oracle = (b0**q * min(outside, inside)) ** (mp.mpf(1) / 2)
    assert lower_constant(p23, K) == pytest.approx(float(oracle), rel=1e-12)
    assert lower_constant(p23, K) == pytest.approx(6.97886419963888, rel=1e-12)


def test_cone_constant_frozen(p23):
    b0, b1 = derive_barenblatt_constants(p23)
    b = lower_constant(p23, K)
    expected = (1 + b1 / b0) ** 3 * 5**3 * (b0 * (2 / b) ** 2 + b1) ** 3
    assert cone_constant(p23, K) == pytest.approx(expected, rel=1e-13)
    assert cone_constant(p23, K) == pytest.approx(84.87667467731451, rel=1e-12)


def test_lower_params_saturate_after_t_star(p23):
    u0 = indicator_field(p23)
    ts = t_star(u0, 1.0, K)
    tau, M = lower_bound_params(u0, 2 * ts, 1.0, K)
    assert tau == pytest.approx(ts / 2)
    assert M == pytest.approx(lower_constant(p23, K) * 4 * math.pi / 3, rel=1e-12)
    tau, M_early = lower_bound_params(u0, ts / 4, 1.0, K)
    assert tau == pytest.approx(ts / 8)
    assert M_early == pytest.approx(M * 0.25**3, rel=1e-12)
    with pytest.raises(ParameterError):
        lower_bound_params(u0, 0.0, 1.0, K)


@pytest.mark.parametrize("t0", [0.01, 1.0, 100.0, 1e4])
def test_upper_params_shape(p23, t0):
    u0 = indicator_field(p23)
    tau, M_bar = upper_bound_params(u0, t0, K)
    floor = (2 * derive_barenblatt_constants(p23)[0]) ** (1 / (p23.sigma * p23.theta * (1 - p23.m)))
    assert tau >= 0
    assert M_bar >= floor * u0.l1gamma() * (1 - 1e-12)
    if tau == 0:
        assert M_bar == pytest.approx(floor * u0.l1gamma(), rel=1e-12)


def test_upper_params_vanish_for_late_start(p23):
    assert upper_bound_params(indicator_field(p23), 1e4, K)[0] == 0.0
    assert upper_bound_params(indicator_field(p23), 0.01, K)[0] > 0.0


def test_upper_params_reject_fat_tails(p23):
    grid = np.geomspace(1e-4, 1e6, 401)
    w0 = with_tail(RadialField(p23, grid, w0_profile(p23, grid)), -2 * p23.m / (1 - p23.m))
    with pytest.raises(NotInX):
        upper_bound_params(w0, 1.0, K)


def test_kappa_constants_validation():
    with pytest.raises(ParameterError):
        KappaConstants(kappa_star=0.0)
    with pytest.raises(ParameterError):
        KappaConstants(calibrated=frozenset({"kappa_nine"}))
    report = KappaConstants().to_json()
    assert set(report["status"].values()) == {"default"}


def test_half_mass_radius_of_ball(p23):
    assert half_mass_radius(indicator_field(p23)) == pytest.approx(0.5 ** (1 / 3), rel=1e-9)
    assert ball_mass(indicator_field(p23), 2.0) == pytest.approx(4 * math.pi / 3, rel=1e-10)


def test_cone_radius_doubles(p34):
    t = 0.7
    assert cone_radius(p34, 2 ** (1 / p34.theta) * t, 2.0) == pytest.approx(2 * cone_radius(p34, t, 2.0), rel=1e-12)


# -- trajectory checks --------------------------------------------------------------


def test_exact_barenblatt_quotients(p23):
    grid = build_grid(p23, 1e-4, 1e8, 16)
    M, times = 1.0, [1.0, 4.0]
    traj = exact_trajectory(p23, M, 0.0, times, grid)
    for t in times:
        record = cone_harnack(traj, t, M, K)
        assert record.quotient == pytest.approx(1.0, abs=1e-12)
        assert record.quotient <= record.H_formula
        assert boundary_harnack(traj, t, M) == pytest.approx(1.0, abs=1e-12)


def test_shifted_barenblatt_boundary_quotient(p23):
    """sup/inf of B(t+tau)/B(t) spans the origin ratio and the far-tail ratio."""
    grid = build_grid(p23, 1e-6, 1e12, 16)
    M, tau = 1.0, 0.5
    times = [1.0, 10.0, 100.0]
    traj = exact_trajectory(p23, M, tau, times, grid)
    for t in times:
        r = grid.centers[grid.centers <= traj.reliable_radius(0)]
        ratio = barenblatt_at(p23, M, t + tau, r) / barenblatt_at(p23, M, t, r)
        q = boundary_harnack(traj, t, M)
        assert q == pytest.approx(ratio.max() / ratio.min(), rel=1e-12)
        limit = ((t + tau) / t) ** (1 / (1 - p23.m) + p23.dim_weighted * p23.theta)
        assert q == pytest.approx(limit, rel=1e-3)


def test_cone_harnack_refuses_early_times(ball_run):
    p, u0, traj = ball_run
    assert cone_time_threshold(u0, K) == pytest.approx(3 * t_star(u0, 0.5 ** (1 / 3), K), rel=1e-9)
    with pytest.raises(EarlyTime):
        cone_harnack(traj, float(traj.times[1]), u0.l1gamma(), K, u0=u0)


def test_cone_quotient_of_ball_run_decreases(ball_run):
    p, u0, traj = ball_run
    M = traj.meta["initial_mass"]
    late = [t for t in traj.times if t >= cone_time_threshold(u0, K)]
    quotients = [cone_harnack(traj, t, M, K, u0=u0).quotient for t in late]
    assert len(quotients) >= 3
    assert np.all(np.diff(quotients) < 0)
    assert max(quotients) < cone_constant(p, K)


def test_boundary_quotient_tends_to_one(ball_run):
    _, _, traj = ball_run
    M = traj.meta["initial_mass"]
    q = [boundary_harnack(traj, t, M) for t in traj.times[1:]]
    assert min(q) >= 1.0
    assert np.all(np.diff(q[3:]) < 0)


def test_snapshots_are_never_interpolated(ball_run):
    _, _, traj = ball_run
    with pytest.raises(ParameterError, match="interpolated"):
        boundary_harnack(traj, 0.123, 1.0)


def test_empirical_sandwich_on_barenblatt(p23):
    """u = B(t+1; M): at mass M only the single shift 1 works, so the search steps to the next mass."""
    grid = build_grid(p23, 1e-4, 1e8, 16)
    M = 1.0
    traj = exact_trajectory(p23, M, 1.0, list(np.geomspace(0.5, 5.0, 6)), grid)
    report = verify_sandwich(traj, t0=0.5)
    assert report.passed and not report.violations
    (tau_up, M_up), (tau_lo, M_lo) = report.upper, report.lower
    assert M_up == pytest.approx(100 ** (1 / 7), rel=1e-12)
    candidates = np.geomspace(M, 1e-3 * M, 8)
    assert np.min(np.abs(candidates[1:] / M_lo - 1)) < 1e-12
    assert 0 < tau_lo < 0.5 and tau_up > 0
    for t, u in zip(traj.times, traj.states):
        r = grid.centers[grid.centers <= traj.reliable_radius(0)]
        u = u[: r.size]
        assert np.all(barenblatt_at(p23, M_lo, t - tau_lo, r) <= u)
        assert np.all(u <= barenblatt_at(p23, M_up, t + tau_up, r))
    assert report.to_json()["verdict"] == "pass"


def test_empirical_sandwich_on_ball_run(ball_run):
    _, _, traj = ball_run
    report = verify_sandwich(traj, t0=0.1)
    assert report.passed
    assert all(m.ok for m in report.margins)


def test_analytic_sandwich_records_constants(ball_run):
    p, u0, traj = ball_run
    report = verify_sandwich(traj, "analytic", t0=1.0, u0=u0)
    assert report.kappa == K
    assert any("default constants" in n for n in report.notes)
    assert report.to_json()["kappa"]["status"]["kappa_star"] == "default"
    assert (report.verdict == "pass") == (not report.violations)
    with pytest.raises(ParameterError):
        verify_sandwich(traj, "analytic", t0=1.0)
    with pytest.raises(ParameterError):
        verify_sandwich(traj, "guess", t0=1.0)


def test_calibration_marks_only_the_smoothing_constant(ball_run):
    p, _, traj = ball_run
    k = calibrate_smoothing_constant([traj])
    assert k.calibrated == frozenset({"kappa_bar_1"})
    M = traj.meta["initial_mass"]
    for t, u in zip(traj.times[1:], traj.states[1:]):
        assert u.max() <= k.kappa_bar_1 * t ** (-p.dim_weighted * p.theta) * M ** (p.sigma * p.theta) * (1 + 1e-12)


def test_tail_limits_of_barenblatt(p23):
    t, M = 2.0, 1.0
    grid = np.geomspace(1e-2, 1e6, 400)
    f = RadialField(p23, grid, barenblatt_at(p23, M, t, grid))
    limits = tail_limits(f, t)
    assert limits.liminf == pytest.approx(limits.reference, rel=1e-3)
    assert limits.limsup == pytest.approx(limits.reference, rel=1e-3)
    assert limits.exponent == pytest.approx(-p23.tail_power, rel=1e-3)


def test_tail_limits_grow_for_fat_subsolution(p23):
    spec = SubsolutionSpec(p23, A=1.0, B=1.0, epsilon=2.0, t0=1.0)
    sups = []
    for top in (1e4, 1e6, 1e8):
        grid = np.geomspace(1e-2, top, 400)
        sups.append(tail_limits(RadialField(p23, grid, subsolution(spec, 1.0, grid)), 1.0).limsup)
    assert sups[0] < sups[1] < sups[2]


def test_tail_limits_need_two_decades(p23):
    with pytest.raises(InsufficientTailData):
        tail_limits(RadialField(p23, np.geomspace(1, 50, 20), np.ones(20)), 1.0)


def test_outer_mass_inequality_at_equal_times(ball_run):
    _, _, traj = ball_run
    for R in (0.5, 2.0, 20.0):
        assert outer_mass_inequality(traj, R, 1.0, 1.0, 1.0, 0.0).holds


def test_outer_mass_inequality_generalizes(ball_run):
    _, _, traj = ball_run
    times = [float(t) for t in traj.times[1:]]
    train = [(times[i + 1], times[i]) for i in range(0, 5)]
    test = [(times[i + 1], times[i]) for i in range(5, len(times) - 1)]
    radii = np.geomspace(0.5, 50.0, 9)
    C1, C2 = fit_outer_mass_constants(traj, radii, train, C1=0.5)
    assert C2 > 0
    for t, s in test:
        for R in radii:
            assert outer_mass_inequality(traj, R, t, s, C1, C2).holds


def test_outer_mass_inequality_on_barenblatt_family(p23):
    grid = build_grid(p23, 1e-4, 1e10, 16)
    times = [1.0, 2.0, 4.0, 8.0]
    traj = exact_trajectory(p23, 1.0, 0.0, times, grid)
    radii = np.geomspace(1.0, 1e3, 7)
    C1 = 2.0 ** (p23.tail_power - p23.dim_weighted)
    _, C2 = fit_outer_mass_constants(traj, radii, [(2.0, 1.0), (4.0, 2.0)], C1=C1)
    for R in radii:
        assert outer_mass_inequality(traj, R, 8.0, 4.0, C1, C2).holds


def test_profile_field_is_a_tail_source(p23):
    assert ball_mass(ProfileField.stationary(p23, 2.0), 1e9) == pytest.approx(2.0, rel=1e-6)
