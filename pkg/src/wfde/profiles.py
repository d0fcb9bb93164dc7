"""Closed-form profiles: Barenblatt solutions, sub- and supersolution families.

The Barenblatt constants follow from writing the self-similar rescaling
zeta^{d-gamma} R(t)^{-(d-gamma)} B_M(zeta x / R(t)), R(t) = (t/theta)^theta,
over a common denominator. With the identity sigma - (d-gamma)(1-m) = 1/theta
the prefactor collapses to t^{1/(1-m)} and one reads off

    b1 = theta * zeta^{1/theta} = theta (1-m) / (sigma m)
    b0 = theta^{1 - sigma theta} zeta^{-(d-gamma)(1-m)} Mbar^{sigma theta (1-m)}

so that b0 t^{sigma theta} M^{-sigma theta (1-m)} = theta zeta^{-(d-gamma)(1-m)} C(M) R(t)^sigma.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc

from .errors import DegenerateTime, NonpositiveMass, ParameterError
from .params import ParameterSet
from .tailspace import PowerTail, TailSource

ArrayLike = float | np.ndarray


def power_moment(p: ParameterSet, alpha: float) -> float:
    """Weighted integral of (1 + |x|^sigma)^{-alpha}, finite when sigma*alpha > d - gamma.

    Substituting s = r^sigma turns it into a Beta integral.
    """
    a = p.dim_weighted / p.sigma
    if not alpha > a:
        raise ParameterError(f"(1+|x|^sigma)^-{alpha} is not weighted-integrable")
    log_beta = math.lgamma(a) + math.lgamma(alpha - a) - math.lgamma(alpha)
    return p.sphere_area * math.exp(log_beta) / p.sigma


def reference_mass(p: ParameterSet) -> float:
    """Weighted mass of (1 + |x|^sigma)^{1/(m-1)}."""
    return power_moment(p, 1.0 / (1.0 - p.m))


def mass_constant(p: ParameterSet, M: float) -> float:
    """C(M) such that (C(M) + |x|^sigma)^{1/(m-1)} has weighted mass M."""
    if not M > 0:
        raise NonpositiveMass(f"mass must be positive, got {M}")
    expo = p.sigma * (1.0 - p.m) / (p.sigma - p.dim_weighted * (1.0 - p.m))
    return (reference_mass(p) / M) ** expo


def derive_barenblatt_constants(p: ParameterSet) -> tuple[float, float]:
    th, z = p.theta, p.zeta
    b1 = th * (1.0 - p.m) / (p.sigma * p.m)
    b0 = (
        th ** (1.0 - p.sigma * th)
        * z ** (-p.dim_weighted * (1.0 - p.m))
        * reference_mass(p) ** (p.sigma * th * (1.0 - p.m))
    )
    return b0, b1


@dataclass(frozen=True)
class BarenblattSpec:
    params: ParameterSet
    M: float
    T: float
    b0: float
    b1: float
    CofM: float


def barenblatt_spec(p: ParameterSet, M: float, T: float = 0.0) -> BarenblattSpec:
    if T < 0:
        raise ParameterError(f"time shift must be >= 0, got {T}")
    b0, b1 = derive_barenblatt_constants(p)
    return BarenblattSpec(p, float(M), float(T), b0, b1, mass_constant(p, M))


def barenblatt(spec: BarenblattSpec, t: ArrayLike, r: ArrayLike) -> np.ndarray:
    return _barenblatt_shifted(spec.params, spec.b0, spec.b1, spec.M, np.asarray(t, dtype=float) + spec.T, r)


def barenblatt_at(p: ParameterSet, M: float, s: ArrayLike, r: ArrayLike) -> np.ndarray:
    """Barenblatt of mass M at effective time s = t + T; s may come from a negative shift."""
    b0, b1 = derive_barenblatt_constants(p)
    return _barenblatt_shifted(p, b0, b1, float(M), np.asarray(s, dtype=float), r)


def _barenblatt_shifted(p: ParameterSet, b0: float, b1: float, M: float, s: np.ndarray, r) -> np.ndarray:
    if np.any(s <= 0):
        raise DegenerateTime(f"t + T must be positive, got {np.min(s)}")
    r = np.asarray(r, dtype=float)
    st = p.sigma * p.theta
    denom = b0 * s**st / M ** (st * (1.0 - p.m)) + b1 * r**p.sigma
    return (s / denom) ** (1.0 / (1.0 - p.m))


def barenblatt_tail_coefficient(spec: BarenblattSpec, t: float) -> float:
    """Limit of value * r^{sigma/(1-m)} as r grows."""
    return ((t + spec.T) / spec.b1) ** (1.0 / (1.0 - spec.params.m))


def stationary_profile(p: ParameterSet, M: float, r: ArrayLike) -> np.ndarray:
    C = mass_constant(p, M)
    return (C + np.asarray(r, dtype=float) ** p.sigma) ** (1.0 / (p.m - 1.0))


class ProfileField(TailSource):
    """amplitude (D + |x|^sigma)^{-1/(1-m)} with outer masses from the incomplete Beta function.

    Both the stationary profile (amplitude 1, D = C(M)) and the Barenblatt
    solution at a fixed time have this shape.
    """

    truncated = False

    def __init__(self, params: ParameterSet, amplitude: float, D: float):
        if not (amplitude > 0 and D > 0):
            raise ParameterError("amplitude and D must be positive")
        self.params = params
        self.amplitude = float(amplitude)
        self.D = float(D)
        q = 1.0 / (1.0 - params.m)
        self._q = q
        self._a = params.dim_weighted / params.sigma
        self.tail = PowerTail(-params.sigma * q, self.amplitude)
        self._scale = self.D ** (1.0 / params.sigma)
        log_beta = math.lgamma(self._a) + math.lgamma(q - self._a) - math.lgamma(q)
        self._total = (
            params.sphere_area * self.amplitude * self.D ** (self._a - q) * math.exp(log_beta) / params.sigma
        )

    @classmethod
    def stationary(cls, p: ParameterSet, M: float) -> "ProfileField":
        return cls(p, 1.0, mass_constant(p, M))

    @classmethod
    def barenblatt(cls, p: ParameterSet, M: float, s: float) -> "ProfileField":
        """The Barenblatt solution of mass M at effective time s."""
        if not s > 0:
            raise DegenerateTime(f"effective time must be positive, got {s}")
        b0, b1 = derive_barenblatt_constants(p)
        st = p.sigma * p.theta
        q = 1.0 / (1.0 - p.m)
        return cls(p, (s / b1) ** q, b0 * s**st / (b1 * M ** (st * (1.0 - p.m))))

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.amplitude * (self.D + r**self.params.sigma) ** (-self._q)

    def outer_mass(self, R) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        x = 1.0 / (1.0 + R**self.params.sigma / self.D)
        return self._total * betainc(self._q - self._a, self._a, x)

    def l1gamma(self) -> float:
        return self._total

    def probe_radii(self) -> np.ndarray:
        return self._scale * np.logspace(-3, 6, 64 * 9 + 1)

    def tail_start(self) -> float:
        return self._scale * 1e6


def w0_profile(p: ParameterSet, r: ArrayLike) -> np.ndarray:
    """(1 + |x|^2)^{-m/(1-m)}: integrable data whose tail is fatter than the minimal one."""
    return (1.0 + np.asarray(r, dtype=float) ** 2) ** (-p.m / (1.0 - p.m))


def epsilon_threshold(p: ParameterSet) -> float:
    """2/(1-m) - (2/sigma)(d-gamma): upper end of the integrable epsilon range."""
    return 2.0 / (1.0 - p.m) - 2.0 * p.dim_weighted / p.sigma


def _check_epsilon(p: ParameterSet, epsilon: float) -> float:
    if not 0 < epsilon < epsilon_threshold(p):
        raise ParameterError(
            f"epsilon must lie in (0, {epsilon_threshold(p):.17g}), got {epsilon}"
        )
    return 1.0 / (1.0 - p.m) - epsilon / 2.0


@dataclass(frozen=True)
class SubsolutionSpec:
    """A / (D(t) + B r^sigma)^alpha with alpha = 1/(1-m) - epsilon/2."""

    params: ParameterSet
    A: float
    B: float
    epsilon: float
    t0: float

    def __post_init__(self):
        _check_epsilon(self.params, self.epsilon)
        if not (self.A > 0 and self.B > 0 and self.t0 > 0):
            raise ParameterError("A, B and t0 must be positive")

    @property
    def alpha(self) -> float:
        return 1.0 / (1.0 - self.params.m) - self.epsilon / 2.0

    def D(self, t: ArrayLike) -> np.ndarray:
        p = self.params
        q = 1.0 - self.alpha * (1.0 - p.m)
        rate = p.sigma * self.A ** (p.m - 1.0) * p.m * self.B * p.dim_weighted * q
        return (rate * np.asarray(t, dtype=float) + self.t0) ** (1.0 / q)


def subsolution(spec: SubsolutionSpec, t: ArrayLike, r: ArrayLike) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return spec.A / (spec.D(t) + spec.B * r**spec.params.sigma) ** spec.alpha


def minimal_H(p: ParameterSet, E: float, F: float, epsilon: float) -> float:
    """Smallest admissible growth rate H of G(t) = t0 + H t."""
    alpha = _check_epsilon(p, epsilon)
    return (
        p.m * p.sigma * F**2 * E ** (p.m - 1.0)
        * (2.0 + p.beta - p.d + p.sigma * alpha * p.m)
    )


@dataclass(frozen=True)
class SupersolutionSpec:
    """E G(t)^alpha / (G(t) + F r^sigma)^alpha with G(t) = t0 + H t."""

    params: ParameterSet
    E: float
    F: float
    epsilon: float
    t0: float
    H: float

    def __post_init__(self):
        _check_epsilon(self.params, self.epsilon)
        if not (self.E > 0 and self.F > 0 and self.t0 > 0 and self.H > 0):
            raise ParameterError("E, F, t0 and H must be positive")
        h_min = minimal_H(self.params, self.E, self.F, self.epsilon)
        if self.H < h_min:
            raise ParameterError(f"H={self.H} is below the admissible bound {h_min:.17g}")

    @property
    def alpha(self) -> float:
        return 1.0 / (1.0 - self.params.m) - self.epsilon / 2.0

    def G(self, t: ArrayLike) -> np.ndarray:
        return self.t0 + self.H * np.asarray(t, dtype=float)


def supersolution(spec: SupersolutionSpec, t: ArrayLike, r: ArrayLike) -> np.ndarray:
    g = spec.G(t)
    r = np.asarray(r, dtype=float)
    return spec.E * (g / (g + spec.F * r**spec.params.sigma)) ** spec.alpha


def nonintegrable_range(p: ParameterSet, epsilon: float) -> str:
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    thr = epsilon_threshold(p)
    if epsilon < thr:
        return "integrable-subsolution"
    if epsilon <= thr / p.m:
        return "non-integrable-subsolution"
    return "not-a-subsolution"


def pde_residual(
    func: Callable[[float, np.ndarray], np.ndarray],
    p: ParameterSet,
    t: float,
    r: ArrayLike,
    rel_step: float = 1e-3,
) -> tuple[np.ndarray, np.ndarray]:
    """Residual u_t - r^{gamma-beta}(w'' + (d-1-beta) w'/r), w = u^m, by 4th-order differences.

    Returns (residual, scale) where scale sums the magnitudes of the individual
    terms, so residual/scale is a relative residual.
    """
    r = np.asarray(r, dtype=float)
    ht = rel_step * t
    ut = (
        -func(t + 2 * ht, r) + 8 * func(t + ht, r) - 8 * func(t - ht, r) + func(t - 2 * ht, r)
    ) / (12 * ht)
    hr = rel_step * r
    w = [func(t, r + k * hr) ** p.m for k in (-2, -1, 0, 1, 2)]
    w1 = (-w[4] + 8 * w[3] - 8 * w[1] + w[0]) / (12 * hr)
    w2 = (-w[4] + 16 * w[3] - 30 * w[2] + 16 * w[1] - w[0]) / (12 * hr**2)
    weight = r ** (p.gamma - p.beta)
    radial = (p.d - 1 - p.beta) * w1 / r
    res = ut - weight * (w2 + radial)
    scale = np.abs(ut) + weight * (np.abs(w2) + np.abs(radial))
    return res, scale


@dataclass(frozen=True)
class NoRatesData:
    """Initial datum A/(1 + B r^sigma)^alpha of unit mass built from a target delta."""

    params: ParameterSet
    delta: float
    epsilon: float
    A: float
    B: float

    @property
    def alpha(self) -> float:
        return 1.0 / (1.0 - self.params.m) - self.epsilon / 2.0

    @property
    def growth_exponent(self) -> float:
        """Exponent (d-gamma) theta + delta used to weight the sup-distance."""
        return self.params.dim_weighted * self.params.theta + self.delta

    @property
    def lower_rate(self) -> float:
        """Exponent of the guaranteed lower bound c t^{rate} for the weighted sup-distance."""
        q = 1.0 - self.alpha * (1.0 - self.params.m)
        return self.growth_exponent - self.alpha / q

    def subsolution(self) -> SubsolutionSpec:
        return SubsolutionSpec(self.params, self.A, self.B, self.epsilon, 1.0)

    def __call__(self, r: ArrayLike) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.A / (1.0 + self.B * r**self.params.sigma) ** self.alpha


def no_rates_data(p: ParameterSet, delta: float, position: float = 0.25) -> NoRatesData:
    """Pick epsilon and B for the slow-convergence construction.

    epsilon is placed at ``position`` inside (epsilon_min, threshold), where
    epsilon_min is where delta = 2 theta (threshold - eps) / (eps (1-m)). B is
    twice the smallest value for which the late-time subsolution beats the
    unit-mass Barenblatt on the shell |x|^sigma = 2 D(t).
    """
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    if not 0 < position < 1:
        raise ParameterError("position must lie in (0, 1)")
    thr = epsilon_threshold(p)
    eps_min = 2.0 * p.theta * thr / (delta * (1.0 - p.m) + 2.0 * p.theta)
    eps = eps_min + position * (thr - eps_min)
    alpha = 1.0 / (1.0 - p.m) - eps / 2.0
    q = 1.0 - alpha * (1.0 - p.m)
    _, b1 = derive_barenblatt_constants(p)
    rate_per_B = p.sigma * p.m * p.dim_weighted * q

    def margin(log_b: float) -> float:
        B = math.exp(log_b)
        lhs = -alpha * math.log1p(2 * B) + math.log(rate_per_B * B) / (1.0 - p.m)
        return lhs + math.log(b1) / (1.0 - p.m)

    log_b = brentq(margin, -20.0, 60.0)
    B = 2.0 * math.exp(log_b)
    A = B ** (p.dim_weighted / p.sigma) / power_moment(p, alpha)
    return NoRatesData(p, float(delta), eps, A, B)
