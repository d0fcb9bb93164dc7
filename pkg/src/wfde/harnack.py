"""Global Harnack sandwiches, cone and boundary Harnack quotients, tail limits.

Two ways to get sandwich parameters: the closed formulas, which depend on five
constants (KappaConstants) that are not known numerically and default to 1,
and an empirical search over a trajectory, which is the ground truth at desk
scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import EarlyTime, InsufficientTailData, NotInX, ParameterError, ZeroMass
from .params import ParameterSet
from .profiles import barenblatt_at, derive_barenblatt_constants
from .solver import Trajectory
from .tailspace import RadialField, TailSource, classify, tail_seminorm

KAPPA_NAMES = ("kappa_star", "kappa_bar_1", "kappa_bar_2", "kappa_under_1", "kappa_under")


@dataclass(frozen=True)
class KappaConstants:
    kappa_star: float = 1.0
    kappa_bar_1: float = 1.0
    kappa_bar_2: float = 1.0
    kappa_under_1: float = 1.0
    kappa_under: float = 1.0
    calibrated: frozenset = frozenset()

    def __post_init__(self):
        for name in KAPPA_NAMES:
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ParameterError(f"{name} must be positive, got {value}")
        unknown = set(self.calibrated) - set(KAPPA_NAMES)
        if unknown:
            raise ParameterError(f"unknown constants marked calibrated: {sorted(unknown)}")

    @property
    def defaults_used(self) -> list[str]:
        return [n for n in KAPPA_NAMES if n not in self.calibrated]

    def to_json(self) -> dict:
        out = {n: getattr(self, n) for n in KAPPA_NAMES}
        out["status"] = {n: ("calibrated" if n in self.calibrated else "default") for n in KAPPA_NAMES}
        return out


def calibrate_smoothing_constant(trajs: list[Trajectory], k: KappaConstants | None = None) -> KappaConstants:
    """Smallest kappa_bar_1 with sup u(t) <= kappa_bar_1 t^{-(d-gamma) theta} M^{sigma theta} on the runs."""
    k = k or KappaConstants()
    best = 0.0
    for tr in trajs:
        p = tr.params
        mass = tr.meta.get("initial_mass", tr.mass(0))
        for t, u in zip(tr.times, tr.states):
            if t <= 0:
                continue
            ratio = float(np.max(u)) * t ** (p.dim_weighted * p.theta) / mass ** (p.sigma * p.theta)
            best = max(best, ratio)
    if best <= 0:
        raise ZeroMass("no positive snapshot to calibrate from")
    values = {n: getattr(k, n) for n in KAPPA_NAMES}
    values["kappa_bar_1"] = best
    return KappaConstants(**values, calibrated=frozenset(k.calibrated | {"kappa_bar_1"}))


def ball_mass(u0: TailSource, R: float) -> float:
    return float(u0.l1gamma() - u0.outer_mass(np.array([float(R)]))[0])


def t_star(u0: TailSource, R: float, k: KappaConstants) -> float:
    """kappa_star ||u0||_{L1_gamma(B_R)}^{1-m} R^{1/theta}."""
    if not R > 0:
        raise ParameterError(f"R must be positive, got {R}")
    p = u0.params
    mass = ball_mass(u0, R)
    if not mass > 0:
        raise ZeroMass(f"no weighted mass inside B_{R}")
    return k.kappa_star * mass ** (1.0 - p.m) * R ** (1.0 / p.theta)


def half_mass_radius(u0: TailSource) -> float:
    """R0 with ||u0||_{L1_gamma(B_R0)} = M/2."""
    total = u0.l1gamma()
    if not total > 0 or not math.isfinite(total):
        raise ZeroMass("half-mass radius needs finite positive mass")
    lo, hi = 1e-12, 1.0
    while ball_mass(u0, hi) < 0.5 * total:
        hi *= 10.0
    return float(brentq(lambda R: ball_mass(u0, R) - 0.5 * total, lo, hi, xtol=1e-14, rtol=1e-12))


def cone_time_threshold(u0: TailSource, k: KappaConstants) -> float:
    """3 t_* with R0 the half-mass radius."""
    return 3.0 * t_star(u0, half_mass_radius(u0), k)


def lower_constant(p: ParameterSet, k: KappaConstants) -> float:
    """b from the two compatibility conditions with a = 1/2."""
    b0, b1 = derive_barenblatt_constants(p)
    st = p.sigma * p.theta
    dt = p.dim_weighted * p.theta
    q = 1.0 / (1.0 - p.m)
    outside = (
        (p.theta * b0**st / (2.0**st * b1)) ** q
        * k.kappa_under**st
        * (k.kappa_star * p.sigma) ** (st * q)
        / (p.dim_weighted * (1.0 - p.m)) ** dt
    )
    inside = k.kappa_star**dt * k.kappa_under_1 / 2.0**dt
    return (b0**q * min(outside, inside)) ** (1.0 / st)


def lower_bound_params(u0: TailSource, t0: float, R0: float, k: KappaConstants) -> tuple[float, float]:
    """(tau_under, M_under) = ((t_* ^ t0)/2, b ||u0||_{B_R0} (1 ^ t0/t_*)^{1/(1-m)})."""
    if not t0 > 0:
        raise ParameterError(f"t0 must be positive, got {t0}")
    p = u0.params
    ts = t_star(u0, R0, k)
    tau = 0.5 * min(ts, t0)
    mass = lower_constant(p, k) * ball_mass(u0, R0) * min(1.0, t0 / ts) ** (1.0 / (1.0 - p.m))
    return tau, mass


def _require_x(u0: TailSource) -> float:
    seminorm = tail_seminorm(u0)
    if math.isinf(seminorm) or classify(u0).classification == "Xc":
        raise NotInX("initial data is not in the tail space (infinite seminorm)")
    return seminorm


def upper_bound_params(u0: TailSource, t0: float, k: KappaConstants) -> tuple[float, float]:
    if not t0 > 0:
        raise ParameterError(f"t0 must be positive, got {t0}")
    p = u0.params
    A = _require_x(u0)
    M = u0.l1gamma()
    b0, b1 = derive_barenblatt_constants(p)
    st = p.sigma * p.theta
    q = 1.0 / (1.0 - p.m)
    C1 = (
        8.0 ** (p.sigma * q) * k.kappa_bar_1 * A**st / t0 ** (p.dim_weighted * p.theta)
        + k.kappa_bar_2 * t0**q / 16.0 ** (p.sigma * q)
    )
    tau = max(0.0, 2.0 * b1 * max(1.0, C1) ** (1.0 - p.m) - t0)
    mass = (
        (2.0 * b0 * k.kappa_bar_1 ** (1.0 - p.m)) ** (1.0 / (st * (1.0 - p.m)))
        * ((t0 + tau) / t0) ** (p.dim_weighted / p.sigma)
        * M
    )
    return tau, mass


def cone_constant(p: ParameterSet, k: KappaConstants) -> float:
    """The closed-form Harnack constant for parabolic cones."""
    b0, b1 = derive_barenblatt_constants(p)
    b = lower_constant(p, k)
    q = 1.0 / (1.0 - p.m)
    st = p.sigma * p.theta
    return k.kappa_bar_1 * (1.0 + b1 / b0) ** q * 5.0**q * (b0 * (2.0 / b) ** st + b1) ** q


def boundary_time_threshold(u0: TailSource, k: KappaConstants) -> float:
    """Time after which the whole-space quotient bound is asserted (nominal with default constants)."""
    p = u0.params
    A = _require_x(u0)
    M = u0.l1gamma()
    R0 = half_mass_radius(u0)
    first = A ** (1.0 - p.m) * (k.kappa_bar_1 / k.kappa_bar_2) ** ((1.0 - p.m) / (p.sigma * p.theta))
    first *= 2.0 ** (7.0 / p.theta)
    second = k.kappa_star * R0 ** (1.0 / p.theta) * (0.5 * M) ** (1.0 - p.m)
    return 3.0 * max(first, second)


# -- trajectory checks ---------------------------------------------------------------


def _snapshot_index(traj: Trajectory, t: float) -> int:
    hits = np.flatnonzero(np.isclose(traj.times, t, rtol=1e-9, atol=1e-14))
    if hits.size == 0:
        raise ParameterError(f"no snapshot at t={t}; states are never interpolated")
    return int(hits[0])


def _require_physical(traj: Trajectory) -> None:
    if traj.variables != "physical":
        raise ParameterError("expected a trajectory in physical variables")


def _reliable(traj: Trajectory, i: int) -> tuple[np.ndarray, np.ndarray]:
    r = traj.radii(i)
    keep = r <= traj.reliable_radius(i)
    return r[keep], traj.states[i][keep]


@dataclass
class Violation:
    t: float
    r: float
    side: str
    ratio: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SnapshotMargin:
    t: float
    lower_margin: float  # min of log(u / lower barrier)
    upper_margin: float  # min of log(upper barrier / u)
    ok: bool
    upper_crossing: float = math.nan  # radius where the upper bound first fails, log-interpolated


@dataclass
class SandwichReport:
    t_window: tuple[float, float]
    lower: tuple[float, float] | None
    upper: tuple[float, float] | None
    mode: str
    violations: list[Violation] = field(default_factory=list)
    verdict: str = "fail"
    kappa: KappaConstants | None = None
    margins: list[SnapshotMargin] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def violation_radii(self, side: str = "upper") -> list[tuple[float, float]]:
        """(t, smallest violating radius) per snapshot for one side."""
        first: dict[float, float] = {}
        for v in self.violations:
            if v.side == side:
                first[v.t] = min(first.get(v.t, math.inf), v.r)
        return sorted(first.items())

    def to_json(self) -> dict:
        def pair(x):
            return None if x is None else {"tau": x[0], "M": x[1]}

        return {
            "t_window": list(self.t_window),
            "mode": self.mode,
            "lower": pair(self.lower),
            "upper": pair(self.upper),
            "verdict": self.verdict,
            "violations": [v.to_json() for v in self.violations],
            "margins": [m.__dict__ for m in self.margins],
            "kappa": None if self.kappa is None else self.kappa.to_json(),
            "notes": list(self.notes),
        }


class _Window:
    """Reliable samples of every snapshot in [t0, t1], stacked for vectorized barrier checks."""

    def __init__(self, traj: Trajectory, t0: float, t1: float):
        self.params = traj.params
        idx = [i for i, t in enumerate(traj.times) if t0 * (1 - 1e-12) <= t <= t1 * (1 + 1e-12)]
        if not idx:
            raise ParameterError(f"no snapshots in [{t0}, {t1}]")
        ts, rs, us = [], [], []
        for i in idx:
            r, u = _reliable(traj, i)
            ts.append(np.full(r.size, traj.times[i]))
            rs.append(r)
            us.append(u)
        self.snap_times = traj.times[idx]
        self.t = np.concatenate(ts)
        self.r = np.concatenate(rs)
        self.u = np.concatenate(us)
        with np.errstate(divide="ignore"):
            self.log_u = np.log(self.u)

    def log_ratio(self, side: str, tau: float, M: float) -> np.ndarray:
        """log(u/barrier) on the lower side, log(barrier/u) on the upper side; >= 0 means satisfied."""
        s = self.t + tau if side == "upper" else self.t - tau
        log_b = np.log(barenblatt_at(self.params, M, s, self.r))
        return log_b - self.log_u if side == "upper" else self.log_u - log_b

    def holds(self, side: str, tau: float, M: float) -> bool:
        return bool(np.min(self.log_ratio(side, tau, M)) >= 0.0)

    def violations(self, side: str, tau: float, M: float) -> list[Violation]:
        lr = self.log_ratio(side, tau, M)
        bad = np.flatnonzero(lr < 0)
        return [Violation(float(self.t[j]), float(self.r[j]), side, float(np.exp(-lr[j]))) for j in bad]

    def margins(self, lower, upper) -> list[SnapshotMargin]:
        out = []
        lo = self.log_ratio("lower", *lower) if lower else None
        hi = self.log_ratio("upper", *upper) if upper else None
        for t in self.snap_times:
            sel = self.t == t
            lm = float(np.min(lo[sel])) if lo is not None else math.nan
            um = float(np.min(hi[sel])) if hi is not None else math.nan
            cross = _first_crossing(self.r[sel], hi[sel]) if hi is not None else math.nan
            out.append(SnapshotMargin(float(t), lm, um, bool(lm >= 0 and um >= 0), cross))
        return out


def _first_crossing(r: np.ndarray, margin: np.ndarray) -> float:
    bad = np.flatnonzero(margin < 0)
    if bad.size == 0:
        return math.nan
    j = int(bad[0])
    if j == 0:
        return float(r[0])
    a, b = margin[j - 1], margin[j]
    frac = a / (a - b)
    return float(np.exp(np.log(r[j - 1]) + frac * (np.log(r[j]) - np.log(r[j - 1]))))


def _bisect(pred, passing: float, failing: float, rel: float) -> float:
    """Move ``passing`` toward ``failing`` while pred stays true, to relative resolution ``rel``."""
    while abs(passing - failing) > rel * abs(passing):
        mid = math.sqrt(passing * failing)
        if pred(mid):
            passing = mid
        else:
            failing = mid
    return passing


def _search_upper(win: _Window, mass: float, tau_max: float, n_mass: int, rel: float):
    taus = np.geomspace(1e-6 * tau_max, tau_max, 61)
    best_fail = None
    for M in np.geomspace(mass, 100.0 * mass, n_mass):
        prev = None
        for tau in taus:
            if win.holds("upper", tau, M):
                tau_hit = tau if prev is None else _bisect(lambda x: win.holds("upper", x, M), tau, prev, rel)
                return (float(tau_hit), float(M)), None
            prev = tau
        worst = float(np.min(win.log_ratio("upper", tau_max, M)))
        if best_fail is None or worst > best_fail[0]:
            best_fail = (worst, (float(tau_max), float(M)))
    return None, best_fail[1]


def _search_lower(win: _Window, mass: float, t0: float, n_mass: int, rel: float):
    taus = np.geomspace(1e-6 * t0, t0 * (1 - 1e-6), 61)[::-1]
    best_fail = None
    for M in np.geomspace(mass, 1e-3 * mass, n_mass):
        prev = None
        for tau in taus:
            if win.holds("lower", tau, M):
                tau_hit = tau if prev is None else _bisect(lambda x: win.holds("lower", x, M), tau, prev, rel)
                return (float(tau_hit), float(M)), None
            prev = tau
        worst = float(np.min(win.log_ratio("lower", taus[-1], M)))
        if best_fail is None or worst > best_fail[0]:
            best_fail = (worst, (float(taus[-1]), float(M)))
    return None, best_fail[1]


def verify_sandwich(
    traj: Trajectory,
    mode: str = "empirical",
    *,
    t0: float,
    t1: float | None = None,
    u0: TailSource | None = None,
    kappa: KappaConstants | None = None,
    R0: float = 1.0,
    tau_max: float | None = None,
    n_mass: int = 8,
    resolution: float = 1e-3,
) -> SandwichReport:
    """Check B(t - tau_, .; M_) <= u(t) <= B(t + tau^, .; M^) on every snapshot in [t0, t1].

    Empirical mode searches the parameters: for each of ``n_mass`` masses it
    scans shifts on a log grid and bisects to ``resolution``; the upper shift
    is capped at ``tau_max`` (default 10 t1). Analytic mode uses the closed
    formulas with ``kappa`` and needs the initial data ``u0``.
    """
    _require_physical(traj)
    t1 = float(traj.times[-1]) if t1 is None else t1
    win = _Window(traj, t0, t1)
    mass = traj.meta.get("initial_mass", traj.mass(0))
    report = SandwichReport((float(t0), float(t1)), None, None, mode)
    if mode == "empirical":
        tau_cap = 10.0 * t1 if tau_max is None else tau_max
        upper, upper_fail = _search_upper(win, mass, tau_cap, n_mass, resolution)
        lower, lower_fail = _search_lower(win, mass, t0, n_mass, resolution)
        report.upper, report.lower = upper, lower
        if upper is None:
            report.violations += win.violations("upper", *upper_fail)
            report.notes.append(f"upper search failed for every mass with shift capped at {tau_cap:g}")
        if lower is None:
            report.violations += win.violations("lower", *lower_fail)
            report.notes.append("lower search failed for every candidate mass")
        report.margins = win.margins(lower or lower_fail, upper or upper_fail)
    elif mode == "analytic":
        if u0 is None:
            raise ParameterError("analytic mode needs the initial data")
        kappa = kappa or KappaConstants()
        report.kappa = kappa
        report.lower = lower_bound_params(u0, t0, R0, kappa)
        report.upper = upper_bound_params(u0, t0, kappa)
        report.violations = win.violations("lower", *report.lower) + win.violations("upper", *report.upper)
        report.margins = win.margins(report.lower, report.upper)
        if kappa.defaults_used:
            report.notes.append("default constants used: " + ", ".join(kappa.defaults_used))
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    ok = report.lower is not None and report.upper is not None and not report.violations
    report.verdict = "pass" if ok else "fail"
    return report


@dataclass
class ConeHarnackRecord:
    t: float
    cone_radius: float
    sup_ratio: float
    inf_ratio: float
    quotient: float
    H_formula: float


def cone_radius(p: ParameterSet, t: float, M: float) -> float:
    return t**p.theta * M ** ((p.m - 1.0) * p.theta)


def _ratio_to_barenblatt(traj: Trajectory, i: int, M: float, r_hi: float) -> np.ndarray:
    r, u = _reliable(traj, i)
    keep = r <= r_hi
    if not np.any(keep):
        raise ParameterError("no grid cell inside the requested region")
    return u[keep] / barenblatt_at(traj.params, M, traj.times[i], r[keep])


def cone_harnack(
    traj: Trajectory, t: float, M: float, k: KappaConstants, u0: TailSource | None = None
) -> ConeHarnackRecord:
    """sup/inf of u/B(t; M) over the cone K(t); needs t >= 3 t_* when u0 is given."""
    _require_physical(traj)
    p = traj.params
    if u0 is not None:
        threshold = cone_time_threshold(u0, k)
        if t < threshold:
            raise EarlyTime(f"t={t} is before 3 t_* = {threshold}")
    i = _snapshot_index(traj, t)
    radius = cone_radius(p, t, M)
    ratio = _ratio_to_barenblatt(traj, i, M, radius)
    sup, inf = float(np.max(ratio)), float(np.min(ratio))
    return ConeHarnackRecord(t, radius, sup, inf, sup / inf, cone_constant(p, k))


def boundary_harnack(traj: Trajectory, t: float, M: float) -> float:
    """sup/inf of u/B(t; M) over the whole reliable grid."""
    _require_physical(traj)
    i = _snapshot_index(traj, t)
    ratio = _ratio_to_barenblatt(traj, i, M, math.inf)
    return float(np.max(ratio) / np.min(ratio))


@dataclass
class TailLimits:
    liminf: float
    limsup: float
    exponent: float
    window: tuple[float, float]
    reference: float  # b1^{-1/(1-m)} t^{1/(1-m)}, the Barenblatt limit


def tail_limits(f: RadialField, t: float, guard_cells: int = 5) -> TailLimits:
    """min/max of f(r) r^{sigma/(1-m)} over the outermost decade of samples, plus the fitted exponent."""
    p = f.params
    g, v = f.grid, f.values
    if f.truncated:
        g, v = g[: g.size - guard_cells], v[: v.size - guard_cells]
    if g.size < 4 or g[-1] / g[0] < 100.0 * (1 - 1e-12):
        raise InsufficientTailData("tail limits need samples over at least two decades")
    sel = (g >= g[-1] / 10.0) & (v > 0)
    if sel.sum() < 2:
        raise InsufficientTailData("fewer than two positive samples in the outermost decade")
    prod = v[sel] * g[sel] ** p.tail_power
    exponent = float(np.polyfit(np.log(g[sel]), np.log(v[sel]), 1)[0])
    _, b1 = derive_barenblatt_constants(p)
    ref = (t / b1) ** (1.0 / (1.0 - p.m))
    return TailLimits(float(np.min(prod)), float(np.max(prod)), exponent, (float(g[sel][0]), float(g[sel][-1])), ref)


@dataclass
class OuterMassCheck:
    R: float
    t: float
    s: float
    lhs: float
    rhs: float
    C1: float
    C2: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12)


def _outer(traj: Trajectory, i: int, R: float) -> float:
    return float(traj.field(i).outer_mass(np.array([R]))[0])


def outer_mass_inequality(traj: Trajectory, R: float, t: float, s: float, C1: float, C2: float) -> OuterMassCheck:
    """outer mass of u(t) beyond 2R against C1 (outer mass of u(s) beyond R) + C2 |t-s|^{1/(1-m)} R^{d-gamma-sigma/(1-m)}."""
    if not R > 0:
        raise ParameterError("R must be positive")
    p = traj.params
    lhs = _outer(traj, _snapshot_index(traj, t), 2.0 * R)
    rhs = C1 * _outer(traj, _snapshot_index(traj, s), R)
    rhs += C2 * abs(t - s) ** (1.0 / (1.0 - p.m)) * R ** (p.dim_weighted - p.tail_power)
    return OuterMassCheck(R, t, s, lhs, rhs, C1, C2)


def fit_outer_mass_constants(
    traj: Trajectory, radii, pairs: list[tuple[float, float]], C1: float = 1.0, safety: float = 2.0
) -> tuple[float, float]:
    """Smallest C2 (times ``safety``) making the inequality hold with the given C1 on the training pairs."""
    p = traj.params
    need = 0.0
    for t, s in pairs:
        if t == s:
            continue
        for R in radii:
            excess = _outer(traj, _snapshot_index(traj, t), 2.0 * R) - C1 * _outer(traj, _snapshot_index(traj, s), R)
            scale = abs(t - s) ** (1.0 / (1.0 - p.m)) * R ** (p.dim_weighted - p.tail_power)
            need = max(need, excess / scale)
    return C1, safety * need


__all__ = [
    "ConeHarnackRecord",
    "KappaConstants",
    "OuterMassCheck",
    "SandwichReport",
    "TailLimits",
    "Violation",
    "ball_mass",
    "boundary_harnack",
    "boundary_time_threshold",
    "calibrate_smoothing_constant",
    "cone_constant",
    "cone_harnack",
    "cone_radius",
    "cone_time_threshold",
    "fit_outer_mass_constants",
    "half_mass_radius",
    "lower_bound_params",
    "lower_constant",
    "outer_mass_inequality",
    "t_star",
    "tail_limits",
    "upper_bound_params",
    "verify_sandwich",
]
