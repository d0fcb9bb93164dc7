"""Admissible parameter regime and the derived self-similarity exponents."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import NonpositiveTime, RegimeError


@dataclass(frozen=True)
class Exponents:
    sigma: float
    theta: float
    zeta: float
    m_c: float


@dataclass(frozen=True)
class ParameterSet:
    """Validated (d, gamma, beta, m) with derived exponents stored eagerly.

    Build instances through :func:`validate_parameters`.
    """

    d: int
    gamma: float
    beta: float
    m: float
    exponents: Exponents = field(compare=False, repr=False)

    @property
    def sigma(self) -> float:
        return self.exponents.sigma

    @property
    def theta(self) -> float:
        return self.exponents.theta

    @property
    def zeta(self) -> float:
        return self.exponents.zeta

    @property
    def m_c(self) -> float:
        return self.exponents.m_c

    @property
    def dim_weighted(self) -> float:
        """d - gamma, the homogeneity of the weighted measure."""
        return self.d - self.gamma

    @property
    def tail_power(self) -> float:
        """sigma/(1-m): decay exponent of the minimal (Barenblatt) tail."""
        return self.sigma / (1.0 - self.m)

    @property
    def tail_exponent(self) -> float:
        """sigma/(1-m) - (d-gamma), the weight in the tail seminorm."""
        return self.tail_power - self.dim_weighted

    @property
    def sphere_area(self) -> float:
        """Area of the unit (d-1)-sphere."""
        return sphere_area(self.d)

    def as_dict(self) -> dict:
        return {"d": self.d, "gamma": self.gamma, "beta": self.beta, "m": self.m}


def sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def derived_exponents(p: ParameterSet) -> Exponents:
    return _exponents(p.d, p.gamma, p.beta, p.m)


def _exponents(d: int, gamma: float, beta: float, m: float) -> Exponents:
    sigma = 2.0 + beta - gamma
    m_c = (d - 2.0 - beta) / (d - gamma)
    theta = 1.0 / ((d - gamma) * (m - m_c))
    try:
        zeta = ((1.0 - m) / (sigma * m)) ** theta
    except OverflowError:
        zeta = math.inf
    return Exponents(sigma=sigma, theta=theta, zeta=zeta, m_c=m_c)


def validate_parameters(d, gamma: float | None = None, beta: float | None = None, m: float | None = None) -> ParameterSet:
    """Check the admissible regime; a ParameterSet passed as ``d`` is re-validated."""
    if isinstance(d, ParameterSet):
        p = d
        return validate_parameters(p.d, p.gamma, p.beta, p.m)
    if gamma is None or beta is None or m is None:
        raise RegimeError("gamma, beta and m are required")
    if int(d) != d or d < 3:
        raise RegimeError(f"dimension must be an integer >= 3, got d={d}")
    d = int(d)
    gamma, beta, m = float(gamma), float(beta), float(m)
    if not gamma < d:
        raise RegimeError(f"weight range violated: need gamma < d, got gamma={gamma}, d={d}")
    if not (gamma - 2.0 < beta <= gamma * (d - 2.0) / d):
        raise RegimeError(
            f"weight range violated: need gamma-2 < beta <= gamma(d-2)/d, "
            f"got gamma={gamma}, beta={beta}"
        )
    m_c = (d - 2.0 - beta) / (d - gamma)
    if not (m_c < m < 1.0):
        raise RegimeError(f"m-range violated: need {m_c:.17g} < m < 1, got m={m}")
    exponents = _exponents(d, gamma, beta, m)
    if not (math.isfinite(exponents.zeta) and exponents.zeta > 0):
        raise RegimeError(f"m={m} is so close to m_c that zeta is not representable in double precision")
    return ParameterSet(d, gamma, beta, m, exponents)


def r_star(t: float, p: ParameterSet) -> float:
    """Self-similar radius (t/theta)^theta."""
    if not t > 0:
        raise NonpositiveTime(f"r_star needs t > 0, got {t}")
    return (t / p.theta) ** p.theta
