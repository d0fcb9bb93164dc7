"""Distances to the Barenblatt manifold, entropy and Fisher information, rate fits, X-norm flow."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import roots_legendre

from .errors import NotInX, ParameterError, RegimeError, WindowError
from .params import ParameterSet
from .profiles import ProfileField, barenblatt_at, mass_constant, power_moment, stationary_profile
from .solver import Trajectory
from .tailspace import PowerTail, RadialField, TailSource, classify, tail_norm, tail_seminorm

_GL_X, _GL_W = roots_legendre(16)
TAIL_SLOPE_THRESHOLD = 0.05
INNER_EXCLUDED_CELLS = 3


def _inner_cut(p: ParameterSet, r: np.ndarray) -> int:
    """Index of the first cell entering sup-norms: 3 cells are skipped at a singular or degenerate weight."""
    return INNER_EXCLUDED_CELLS if p.gamma > 0 and r.size > 2 * INNER_EXCLUDED_CELLS else 0


def _ratio_tail_slope(r: np.ndarray, ratio: np.ndarray) -> float:
    """log-log slope of a ratio over the outermost two decades of samples."""
    sel = (r >= r[-1] / 100.0) & (ratio > 0)
    if sel.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(r[sel]), np.log(ratio[sel]), 1)[0])


def _minimize_over_mass(objective, mass: float) -> tuple[float, float]:
    """Pre-scan 32 log-spaced masses in [mass/10, 10 mass], then a bounded golden-type search."""
    grid = np.geomspace(mass / 10.0, mass * 10.0, 32)
    vals = np.array([objective(M) for M in grid])
    if not np.any(np.isfinite(vals)):
        return math.inf, float(mass)
    # flat minima happen (a tail mismatch can pin the sup for a whole range of M);
    # among near-ties take the smallest mass, as an increasing scan would
    best = np.nanmin(vals)
    i = int(np.flatnonzero(vals <= best * (1 + 1e-9) + 1e-15)[0])
    lo = math.log(grid[max(i - 1, 0)])
    hi = math.log(grid[min(i + 1, grid.size - 1)])
    res = minimize_scalar(lambda x: objective(math.exp(x)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    if res.fun < vals[i] * (1 - 1e-9):
        return float(res.fun), float(math.exp(res.x))
    return float(vals[i]), float(grid[i])


# -- distances ----------------------------------------------------------------------


def _l1_difference(f: RadialField, M: float) -> float:
    """Weighted L1 distance between f and the stationary profile B_M, including the region beyond the grid."""
    p = f.params
    ref = ProfileField.stationary(p, M)
    g = f.grid
    k = p.d - 1.0 - p.gamma
    a, b = g[:-1], g[1:]
    half, mid = 0.5 * (b - a), 0.5 * (b + a)
    r = mid[:, None] + half[:, None] * _GL_X[None, :]
    diff = np.abs(f(r.ravel()) - ref(r.ravel())).reshape(r.shape) * r**k
    inside = p.sphere_area * float(np.sum(half[:, None] * _GL_W[None, :] * diff))
    # the ball below the first sample, where f is constant
    r0 = g[0] * 0.5 * (1.0 + _GL_X)
    core = p.sphere_area * 0.5 * g[0] * float(np.sum(_GL_W * np.abs(f.values[0] - ref(r0)) * r0**k))
    if f.tail is None:
        beyond = float(ref.outer_mass(np.array([g[-1]]))[0])
    elif math.isclose(f.tail.exponent, ref.tail.exponent, rel_tol=1e-12):
        beyond = abs(f.tail.coefficient - ref.tail.coefficient) * p.sphere_area * g[-1] ** (
            k + 1 + f.tail.exponent) / -(k + 1 + f.tail.exponent)
    else:
        beyond = math.inf if f.tail.exponent + k + 1 >= 0 else _tail_difference_quad(f, ref, g[-1])
    return inside + core + beyond


def _tail_difference_quad(f: RadialField, ref: ProfileField, start: float) -> float:
    p = f.params
    k = p.d - 1.0 - p.gamma
    # log-spaced Gauss-Legendre over 40 decades, enough for any integrable power
    edges = start * np.logspace(0, 40, 401)
    a, b = edges[:-1], edges[1:]
    half, mid = 0.5 * (b - a), 0.5 * (b + a)
    r = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = np.abs(f.tail(r) - ref(r)) * r**k
    return p.sphere_area * float(np.sum(half[:, None] * _GL_W[None, :] * vals))


def d1(f: RadialField) -> tuple[float, float]:
    """inf over M of the weighted L1 distance to B_M, with the minimizing M."""
    mass = f.l1gamma()
    if not (mass > 0 and math.isfinite(mass)):
        raise ParameterError("d1 needs a field with finite positive mass")
    return _minimize_over_mass(lambda M: _l1_difference(f, M), mass)


def _sup_relative(f: RadialField, M: float) -> float:
    p = f.params
    r = f.grid
    cut = _inner_cut(p, r)
    B = stationary_profile(p, M, r)
    err = float(np.max(np.abs(f.values[cut:] / B[cut:] - 1.0)))
    if f.tail is not None:
        # the ratio tends to the tail coefficient (B_M has coefficient 1 at infinity)
        err = max(err, abs(f.tail.coefficient - 1.0))
    return err


def d_inf(f: RadialField) -> tuple[float, float]:
    """inf over M of sup |f/B_M - 1|; (inf, mass) when the tail exponent cannot match."""
    mass = f.l1gamma()
    if f.tail is not None and not math.isclose(f.tail.exponent, -f.params.tail_power, rel_tol=1e-9):
        return math.inf, float(mass)
    if f.truncated:
        ratio = f.values / stationary_profile(f.params, mass, f.grid)
        if _ratio_tail_slope(f.grid, ratio) > TAIL_SLOPE_THRESHOLD:
            return math.inf, float(mass)
    return _minimize_over_mass(lambda M: _sup_relative(f, M), mass)


@dataclass
class ErrorSeries:
    region: str
    upsilon: float | None
    times: np.ndarray
    errors: np.ndarray  # inf marks an infinity flag

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.errors.tolist()))


def relative_error(traj: Trajectory, region: str = "whole", upsilon: float = 1.0) -> ErrorSeries:
    """sup |u/B(t; M) - 1| at each positive snapshot time, M the trajectory mass.

    ``cone`` restricts to r <= upsilon t^theta. ``whole`` uses the reliable grid
    and reports inf when u/B grows at the outer end (a fatter tail).
    """
    if traj.variables != "physical":
        raise ParameterError("relative_error expects physical variables")
    if region not in ("cone", "whole"):
        raise ParameterError(f"region must be 'cone' or 'whole', got {region!r}")
    p = traj.params
    M = traj.meta.get("initial_mass", traj.mass(0))
    times, errors = [], []
    for i, t in enumerate(traj.times):
        if t <= 0:
            continue
        r = traj.radii(i)
        keep = r <= traj.reliable_radius(i)
        cut = _inner_cut(p, r)
        keep[:cut] = False
        r, u = r[keep], traj.states[i][keep]
        ratio = u / barenblatt_at(p, M, t, r)
        if region == "cone":
            inside = r <= upsilon * t**p.theta
            if not np.any(inside):
                raise ParameterError(f"cone at t={t} contains no grid cell")
            err = float(np.max(np.abs(ratio[inside] - 1.0)))
        else:
            err = math.inf if _ratio_tail_slope(r, ratio) > TAIL_SLOPE_THRESHOLD else float(
                np.max(np.abs(ratio - 1.0)))
        times.append(float(t))
        errors.append(err)
    return ErrorSeries(region, upsilon if region == "cone" else None, np.array(times), np.array(errors))


def weighted_sup_distance(traj: Trajectory, exponent: float) -> list[tuple[float, float]]:
    """(t, t^exponent sup |u - B(t; M)|) over the reliable grid, M the trajectory mass."""
    if traj.variables != "physical":
        raise ParameterError("weighted_sup_distance expects physical variables")
    p = traj.params
    M = traj.meta.get("initial_mass", traj.mass(0))
    rows = []
    for i, t in enumerate(traj.times):
        if t <= 0:
            continue
        r = traj.radii(i)
        keep = r <= traj.reliable_radius(i)
        gap = np.abs(traj.states[i][keep] - barenblatt_at(p, M, t, r[keep]))
        rows.append((float(t), float(t**exponent * np.max(gap))))
    return rows


# -- entropy ------------------------------------------------------------------------


@dataclass
class EntropyRecord:
    tau: float
    F: float
    I: float
    l1_distance: float
    d_inf: float


def _entropy_density(w: np.ndarray, m: float) -> np.ndarray:
    """m/(m-1) [(w^m - 1)/m - (w - 1)], written with expm1 to keep precision near w = 1."""
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    wm1 = np.where(w > 0, np.expm1(m * lw), -1.0)
    return m / (m - 1.0) * (wm1 / m - (w - 1.0))


def entropy_record(p: ParameterSet, grid, v: np.ndarray, M: float, tau: float, reliable_radius: float) -> EntropyRecord:
    """F and I for v on a (self-similar) grid, against the stationary profile of mass M."""
    r = grid.centers
    B = stationary_profile(p, M, r)
    w = v / B
    F = float(np.sum(grid.volumes * _entropy_density(w, p.m) * B**p.m))
    with np.errstate(divide="ignore"):
        phi = (w ** (p.m - 1.0) - 1.0) * B ** (p.m - 1.0)
    v_face = 0.5 * (v[:-1] + v[1:])
    ok = np.isfinite(phi[:-1]) & np.isfinite(phi[1:])
    I = p.m / (1.0 - p.m) * float(np.sum((grid.transmissibility * v_face * np.diff(phi) ** 2)[ok]))
    l1 = float(np.sum(grid.volumes * np.abs(v - B)))
    keep = r <= reliable_radius
    cut = _inner_cut(p, r)
    keep[:cut] = False
    ratio = w[keep]
    slope = _ratio_tail_slope(r[keep], ratio)
    dinf = math.inf if slope > TAIL_SLOPE_THRESHOLD else float(np.max(np.abs(ratio - 1.0)))
    return EntropyRecord(float(tau), F, I, l1, dinf)


def entropy_series(traj: Trajectory) -> list[EntropyRecord]:
    if traj.variables != "selfsimilar":
        raise ParameterError("entropy_series expects a trajectory in self-similar variables")
    M = traj.meta.get("initial_mass", traj.mass(0))
    return [
        entropy_record(traj.params, traj.grid_at(i), traj.states[i], M, traj.times[i], traj.reliable_radius(i))
        for i in range(len(traj))
    ]


def _late(series: list[EntropyRecord], window) -> list[EntropyRecord]:
    if window is None:
        tau_end = series[-1].tau
        window = (0.5 * tau_end, tau_end)
    sel = [rec for rec in series if window[0] <= rec.tau <= window[1]]
    if len(sel) < 3:
        raise WindowError(f"fewer than three records in the window {window}")
    return sel


def production_mismatch(series: list[EntropyRecord], window=None) -> float:
    """max over interior records of |dF/dtau + I| / I, dF/dtau by centered differences."""
    recs = _late(series, window)
    tau = np.array([r.tau for r in recs])
    F = np.array([r.F for r in recs])
    I = np.array([r.I for r in recs])
    dF = (F[2:] - F[:-2]) / (tau[2:] - tau[:-2])
    # centred difference estimates the derivative at the midpoint; compare with the
    # average of I there, which matches to second order on nonuniform records
    I_mid = I[1:-1]
    return float(np.max(np.abs(dF + I_mid) / I_mid))


@dataclass
class EntropyProductionReport:
    min_margin: float  # min of I - 4F
    min_relative_margin: float  # min of (I - 4F) / I
    decay_rate: float  # fitted rate of log F on the window
    improved_constant: float  # 4/theta
    production_mismatch: float
    monotone: bool
    window: tuple[float, float]
    verdict: str


def entropy_production_check(
    series: list[EntropyRecord], p: ParameterSet, window=None, tolerance: float = 1e-10
) -> EntropyProductionReport:
    """4F <= I at every record, plus the decay rate of F, in the unweighted regime m > (d-1)/d."""
    if p.gamma != 0 or p.beta != 0 or not p.m > (p.d - 1.0) / p.d:
        raise RegimeError("entropy production inequality needs gamma = beta = 0 and m > (d-1)/d")
    recs = _late(series, window)
    F_all = np.array([r.F for r in series])
    I_all = np.array([r.I for r in series])
    margins = I_all - 4.0 * F_all
    rel = margins / np.maximum(I_all, 1e-300)
    tau = np.array([r.tau for r in recs])
    logF = np.log(np.array([r.F for r in recs]))
    rate = -float(np.polyfit(tau, logF, 1)[0])
    monotone = bool(np.all(np.diff(F_all) <= tolerance * np.maximum(F_all[:-1], 1e-300) + tolerance))
    mismatch = production_mismatch(series, (tau[0], tau[-1]))
    ok = np.min(margins) >= -tolerance and monotone
    return EntropyProductionReport(
        float(np.min(margins)), float(np.min(rel)), rate, 4.0 / p.theta, mismatch, monotone,
        (float(tau[0]), float(tau[-1])), "pass" if ok else "fail",
    )


def csiszar_kullback_constant(p: ParameterSet, M: float) -> float:
    """(8/m times the weighted L1 norm of B_M^{2-m})^{1/2}."""
    C = mass_constant(p, M)
    alpha = (2.0 - p.m) / (1.0 - p.m)
    norm = C ** (p.dim_weighted / p.sigma - alpha) * power_moment(p, alpha)
    return math.sqrt(8.0 / p.m * norm)


@dataclass
class CsiszarKullbackReport:
    constant: float
    margins: list[float]
    verdict: str

    @property
    def min_margin(self) -> float:
        return min(self.margins)


def csiszar_kullback_check(series: list[EntropyRecord], p: ParameterSet, M: float, tolerance: float = 1e-12) -> CsiszarKullbackReport:
    c = csiszar_kullback_constant(p, M)
    margins = [c * math.sqrt(max(r.F, 0.0)) - r.l1_distance for r in series]
    return CsiszarKullbackReport(c, margins, "pass" if min(margins) >= -tolerance else "fail")


# -- rates --------------------------------------------------------------------------


@dataclass
class RateFit:
    window: tuple[float, float]
    slope: float
    intercept: float
    residual: float


def rate_fit(series: Iterable[tuple[float, float]], window: tuple[float, float]) -> RateFit:
    """Least-squares line through (log t, log value) for t in the window."""
    lo, hi = window
    if not (0 < lo < hi) or hi / lo < 10.0 * (1 - 1e-12):
        raise WindowError(f"window must span at least one decade, got {window}")
    data = np.array([(t, v) for t, v in series if lo <= t <= hi], dtype=float)
    if data.shape[0] < 2:
        raise WindowError("fewer than two samples in the window")
    if np.any(data[:, 1] <= 0) or not np.all(np.isfinite(data[:, 1])):
        raise WindowError("rate fit needs positive finite values")
    x, y = np.log(data[:, 0]), np.log(data[:, 1])
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(y - (slope * x + icpt))))
    return RateFit((float(lo), float(hi)), float(slope), float(icpt), resid)


# -- X-norm along the flow ------------------------------------------------------------


def xnorm_limit(p: ParameterSet) -> float:
    """Large-time limit of t^{-1/(1-m)} ||u(t)||_X, the X-norm of the minimal tail b1^{-1/(1-m)} |x|^{-sigma/(1-m)}."""
    q = 1.0 / (1.0 - p.m)
    return p.sphere_area * (p.sigma * p.m) ** q * ((1.0 - p.m) * p.theta) ** (-p.m * q)


@dataclass
class XNormFlow:
    times: np.ndarray
    seminorms: np.ndarray
    norms: np.ndarray
    normalized: np.ndarray  # t^{-1/(1-m)} ||u(t)||_X
    limit: float
    min_step_margin: float  # min over consecutive pairs of (prev - next) / prev
    difference: np.ndarray | None = None  # t^{-1/(1-m)} ||u(t) - B(t; M)||_X
    notes: list[str] = field(default_factory=list)

    @property
    def nonincreasing(self) -> bool:
        return self.min_step_margin >= -1e-6

    @property
    def above_limit(self) -> bool:
        return bool(np.all(self.normalized >= self.limit * (1 - 1e-6)))

    def limit_gap(self) -> float:
        return float(abs(self.normalized[-1] / self.limit - 1.0))


def _difference_field(f: RadialField, ref: ProfileField) -> RadialField:
    vals = np.abs(f.values - ref(f.grid))
    tail = None
    if f.tail is not None:
        c = abs(f.tail.coefficient - ref.tail.coefficient)
        if c > 0:
            tail = PowerTail(f.tail.exponent, c)
            vals[-1] = c * f.grid[-1] ** f.tail.exponent
    return RadialField(f.params, f.grid, vals, tail, truncated=f.truncated)


def xnorm_flow(samples: Iterable[tuple[float, TailSource]], M: float | None = None) -> XNormFlow:
    """X-norms along a flow given as (t, u(t)) pairs with t > 0.

    When M is given and the samples are RadialFields, also reports the normalized
    X-norm of u(t) - B(t; M).
    """
    samples = list(samples)
    if not samples:
        raise ParameterError("no samples")
    p = samples[0][1].params
    q = 1.0 / (1.0 - p.m)
    times, semis, norms, diffs = [], [], [], []
    for t, f in samples:
        if not t > 0:
            raise ParameterError("X-norm flow needs positive times")
        if classify(f).classification == "Xc":
            raise NotInX(f"u(t={t}) is not in the tail space")
        semi = tail_seminorm(f)
        if math.isinf(semi):
            raise NotInX(f"u(t={t}) has infinite seminorm")
        times.append(float(t))
        semis.append(semi)
        norms.append(tail_norm(f))
        if M is not None and isinstance(f, RadialField):
            diffs.append(t ** (-q) * tail_norm(_difference_field(f, ProfileField.barenblatt(p, M, t))))
    t = np.array(times)
    norms_arr = np.array(norms)
    normalized = t ** (-q) * norms_arr
    steps = (normalized[:-1] - normalized[1:]) / normalized[:-1] if t.size > 1 else np.array([0.0])
    return XNormFlow(
        times=t,
        seminorms=np.array(semis),
        norms=norms_arr,
        normalized=normalized,
        limit=xnorm_limit(p),
        min_step_margin=float(np.min(steps)),
        difference=np.array(diffs) if diffs else None,
    )


__all__ = [
    "CsiszarKullbackReport",
    "EntropyProductionReport",
    "EntropyRecord",
    "ErrorSeries",
    "RateFit",
    "XNormFlow",
    "csiszar_kullback_check",
    "csiszar_kullback_constant",
    "d1",
    "d_inf",
    "entropy_production_check",
    "entropy_record",
    "entropy_series",
    "production_mismatch",
    "rate_fit",
    "relative_error",
    "weighted_sup_distance",
    "xnorm_flow",
    "xnorm_limit",
]
