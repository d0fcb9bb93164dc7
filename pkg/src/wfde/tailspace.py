"""The tail space X: outer masses, the tail seminorm and norm, auxiliary norms,
the ball-around-x tail functional, classification and pathological examples.

A :class:`RadialField` is interpreted as a continuous function of r:
constant below the first sample, piecewise power law between positive
samples (linear when an endpoint vanishes), and beyond the last sample either
its power-law tail extension or zero.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.special import betainc, roots_jacobi, roots_legendre

from .errors import InsufficientTailData, ParameterError
from .params import ParameterSet

SLOPE_THRESHOLD = 0.05
_GL_X, _GL_W = roots_legendre(16)
_GL64_X, _GL64_W = roots_legendre(64)


@dataclass(frozen=True)
class PowerTail:
    exponent: float
    coefficient: float

    def __call__(self, r):
        return self.coefficient * np.asarray(r, dtype=float) ** self.exponent


def _power_segment(fa, a, q, lo, hi, k):
    """Integral over [lo, hi] of fa (r/a)^q r^k dr, vectorized and stable as q+k+1 -> 0."""
    e = q + k + 1.0
    x0 = np.log(lo / a)
    dx = np.log(hi / a) - x0
    z = e * dx
    small = np.abs(z) < 1e-12
    e_safe = np.where(small, 1.0, e)
    core = np.where(small, dx * (1.0 + 0.5 * z), np.expm1(z) / e_safe)
    return fa * a ** (k + 1.0) * np.exp(e * x0) * core


def _linear_segment(fa, fb, a, b, lo, hi, k):
    """Integral over [lo, hi] of the linear interpolant (a, fa)-(b, fb) times r^k."""
    s = (fb - fa) / (b - a)
    c = fa - s * a
    return c * (hi ** (k + 1) - lo ** (k + 1)) / (k + 1) + s * (hi ** (k + 2) - lo ** (k + 2)) / (k + 2)


class TailSource:
    """Anything with a weighted outer-mass function; shared sup machinery lives here."""

    params: ParameterSet
    tail: PowerTail | None = None
    truncated: bool = False

    def outer_mass(self, R) -> np.ndarray:
        raise NotImplementedError

    def probe_radii(self) -> np.ndarray:
        raise NotImplementedError

    def tail_start(self) -> float | None:
        return None

    def fit_window(self) -> tuple[float, float] | None:
        return None

    def tail_growth(self) -> float | None:
        """Exponent of the R-profile on the analytic tail extension, if any."""
        if self.tail is None:
            return None
        return self.tail.exponent + self.params.tail_power

    def l1gamma(self) -> float:
        return float(self.outer_mass(np.array([0.0]))[0])


class RadialField(TailSource):
    def __init__(
        self,
        params: ParameterSet,
        grid,
        values,
        tail: PowerTail | None = None,
        truncated: bool = False,
    ):
        grid = np.array(grid, dtype=float)
        values = np.array(values, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or grid.shape != values.shape:
            raise ParameterError("grid and values must be 1-D arrays of equal length >= 2")
        if not (grid[0] > 0 and np.all(np.diff(grid) > 0)):
            raise ParameterError("grid must be positive and strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ParameterError("values must be finite and nonnegative")
        if tail is not None:
            if not tail.coefficient > 0:
                raise ParameterError("tail coefficient must be positive")
            at_end = tail(grid[-1])
            if not math.isclose(float(at_end), values[-1], rel_tol=1e-3):
                raise ParameterError(
                    f"tail extension {float(at_end):.6g} does not match last sample {values[-1]:.6g}"
                )
        grid.flags.writeable = False
        values.flags.writeable = False
        self.params = params
        self.grid = grid
        self.values = values
        self.tail = tail
        self.truncated = bool(truncated) and tail is None
        self._prepare()

    # -- construction helpers -------------------------------------------------
    @classmethod
    def from_function(
        cls,
        params: ParameterSet,
        func,
        r_min: float,
        r_max: float,
        cells_per_decade: int = 64,
        tail_exponent: float | None = None,
        truncated: bool = False,
    ) -> "RadialField":
        n = max(2, int(round(np.log10(r_max / r_min) * cells_per_decade)) + 1)
        grid = np.logspace(np.log10(r_min), np.log10(r_max), n)
        values = np.asarray(func(grid), dtype=float)
        tail = None
        if tail_exponent is not None:
            tail = PowerTail(tail_exponent, values[-1] / grid[-1] ** tail_exponent)
        return cls(params, grid, values, tail, truncated)

    def scaled(self, c: float) -> "RadialField":
        if c < 0:
            raise ParameterError("scale factor must be nonnegative")
        tail = None if self.tail is None or c == 0 else PowerTail(self.tail.exponent, c * self.tail.coefficient)
        return RadialField(self.params, self.grid, c * self.values, tail, self.truncated)

    def dilated(self, lam: float) -> "RadialField":
        """The field x -> f(lam x)."""
        tail = None
        if self.tail is not None:
            tail = PowerTail(self.tail.exponent, self.tail.coefficient * lam**self.tail.exponent)
        return RadialField(self.params, self.grid / lam, self.values, tail, self.truncated)

    def restricted(self, r_hi: float) -> "RadialField":
        """Drop samples beyond r_hi; the result is marked truncated."""
        keep = self.grid <= r_hi
        return RadialField(self.params, self.grid[keep], self.values[keep], None, True)

    def with_fitted_tail(self, lo: float, hi: float) -> "RadialField":
        """Cut at ``hi`` and continue with a power law fitted over [lo, hi]."""
        sel = (self.grid >= lo) & (self.grid <= hi) & (self.values > 0)
        if sel.sum() < 2:
            raise InsufficientTailData("fewer than two positive samples in the fit window")
        slope = np.polyfit(np.log(self.grid[sel]), np.log(self.values[sel]), 1)[0]
        keep = self.grid <= hi
        g, v = self.grid[keep], self.values[keep]
        return RadialField(self.params, g, v, PowerTail(slope, v[-1] / g[-1] ** slope))

    # -- evaluation ---------------------------------------------------------------
    def _prepare(self) -> None:
        p = self.params
        g, v = self.grid, self.values
        self._k = p.d - 1.0 - p.gamma
        a, b = g[:-1], g[1:]
        fa, fb = v[:-1], v[1:]
        self._power = (fa > 0) & (fb > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            self._q = np.where(self._power, np.log(fb / fa) / np.log(b / a), 0.0)
        cells = self._cell_integral(np.arange(a.size), a, b)
        self._cell_mass = p.sphere_area * cells
        # outer mass from each grid radius to the end of the grid
        self._grid_outer = np.concatenate([np.cumsum(self._cell_mass[::-1])[::-1], [0.0]])
        self._tail_mass = self._tail_outer(g[-1])
        self._inner_mass = p.sphere_area * v[0] * g[0] ** p.dim_weighted / p.dim_weighted

    def _cell_integral(self, idx, lo, hi):
        g, v, k = self.grid, self.values, self._k
        a, b = g[idx], g[idx + 1]
        fa, fb = v[idx], v[idx + 1]
        pw = self._power[idx]
        out = np.zeros(np.shape(idx))
        if np.any(pw):
            out[pw] = _power_segment(fa[pw], a[pw], self._q[idx][pw], lo[pw], hi[pw], k)
        lin = ~pw
        if np.any(lin):
            out[lin] = _linear_segment(fa[lin], fb[lin], a[lin], b[lin], lo[lin], hi[lin], k)
        return out

    def _tail_outer(self, R) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        if self.tail is None:
            return np.zeros_like(R)
        e = self.tail.exponent + self.params.dim_weighted
        if e >= 0:
            return np.full_like(R, np.inf)
        return self.params.sphere_area * self.tail.coefficient * R**e / (-e)

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        g, v = self.grid, self.values
        out = np.zeros_like(r)
        inner = r < g[0]
        out[inner] = v[0]
        beyond = r > g[-1]
        if self.tail is not None:
            out[beyond] = self.tail(r[beyond])
        mid = ~inner & ~beyond
        idx = np.clip(np.searchsorted(g, r[mid], side="right") - 1, 0, g.size - 2)
        a, b = g[idx], g[idx + 1]
        pw = self._power[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            pval = v[idx] * (r[mid] / a) ** self._q[idx]
        lval = v[idx] + (v[idx + 1] - v[idx]) * (r[mid] - a) / (b - a)
        out[mid] = np.where(pw, pval, lval)
        return out

    def outer_mass(self, R) -> np.ndarray:
        """Weighted mass of {|x| > R}, exact for the piecewise representation."""
        R = np.atleast_1d(np.asarray(R, dtype=float))
        g = self.grid
        p = self.params
        out = np.empty_like(R)
        inner = R < g[0]
        beyond = R >= g[-1]
        mid = ~inner & ~beyond
        if np.any(inner):
            Ri = R[inner]
            part = p.sphere_area * self.values[0] * (g[0] ** p.dim_weighted - Ri**p.dim_weighted) / p.dim_weighted
            out[inner] = part + self._grid_outer[0] + self._tail_mass
        if np.any(beyond):
            out[beyond] = self._tail_outer(R[beyond])
        if np.any(mid):
            idx = np.clip(np.searchsorted(g, R[mid], side="right") - 1, 0, g.size - 2)
            part = p.sphere_area * self._cell_integral(idx, R[mid], g[idx + 1])
            out[mid] = part + self._grid_outer[idx + 1] + self._tail_mass
        return out

    def l1gamma(self) -> float:
        return float(self._inner_mass + self._grid_outer[0] + self._tail_mass)

    def probe_radii(self) -> np.ndarray:
        return self.grid

    def tail_start(self) -> float | None:
        return float(self.grid[-1])

    def fit_window(self) -> tuple[float, float] | None:
        if not self.truncated:
            return None
        hi = float(self.grid[-1])
        if hi / self.grid[0] < 100.0 * (1 - 1e-12):
            raise InsufficientTailData("fewer than two decades of samples and no tail extension")
        return hi / 100.0, hi

    def weighted_integral(self, weight, lo: float, hi: float) -> float:
        """Integral of f(|x|) weight(|x|) |x|^{-gamma} dx over lo < |x| < hi (Gauss-Legendre per cell)."""
        if hi <= lo:
            return 0.0
        pts = np.concatenate([[lo], self.grid[(self.grid > lo) & (self.grid < hi)], [hi]])
        a, b = pts[:-1], pts[1:]
        half, mid = 0.5 * (b - a), 0.5 * (b + a)
        r = mid[:, None] + half[:, None] * _GL_X[None, :]
        vals = self(r.ravel()).reshape(r.shape) * weight(r) * r**self._k
        return float(self.params.sphere_area * np.sum(half[:, None] * _GL_W[None, :] * vals))


def indicator_field(params: ParameterSet, radius: float = 1.0, height: float = 1.0) -> RadialField:
    """height times the indicator of the ball B_radius (compact support, exact masses)."""
    if not radius > 0 or not height > 0:
        raise ParameterError("radius and height must be positive")
    grid = radius * np.array([1e-6, 1.0, 1.0 + 1e-12])
    return RadialField(params, grid, [height, height, 0.0])


def weighted_outer_mass(f: TailSource, R: float) -> float:
    if R < 0:
        raise ParameterError("R must be nonnegative")
    return float(f.outer_mass(np.array([float(R)]))[0])


def _refined_sup(profile, probes: np.ndarray) -> tuple[float, float]:
    vals = profile(probes)
    i = int(np.argmax(vals))
    best, arg = float(vals[i]), float(probes[i])
    lo = probes[max(i - 1, 0)]
    hi = probes[min(i + 1, probes.size - 1)]
    if hi > lo:
        res = minimize_scalar(
            lambda x: -float(profile(np.array([x]))[0]),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-13 * hi},
        )
        if -res.fun > best:
            best, arg = float(-res.fun), float(res.x)
    return best, arg


def _probe_set(f: TailSource, include_zero: bool) -> np.ndarray:
    probes = np.asarray(f.probe_radii(), dtype=float)
    start = f.tail_start()
    if f.tail is not None and start is not None:
        # 64 probes per decade across two decades of the extension
        probes = np.concatenate([probes, start * np.logspace(0, 2, 129)[1:]])
    if include_zero:
        probes = np.concatenate([[0.0], probes])
    return np.unique(probes)


def tail_seminorm_with_arg(f: TailSource) -> tuple[float, float]:
    """Returns (|f|_X, argmax R); argmax is inf when the profile diverges."""
    growth = f.tail_growth()
    if growth is not None and growth > 0:
        return math.inf, math.inf
    e = f.params.tail_exponent
    return _refined_sup(lambda R: R**e * f.outer_mass(R), _probe_set(f, False))


def tail_seminorm(f: TailSource) -> float:
    return tail_seminorm_with_arg(f)[0]


def tail_norm(f: TailSource) -> float:
    """max{L1_gamma, |f|_X}."""
    return max(f.l1gamma(), tail_seminorm(f))


def tail_norm_direct(f: TailSource) -> float:
    """sup over R of (1 v R)^e times the outer mass, evaluated without the max-identity."""
    growth = f.tail_growth()
    if growth is not None and growth > 0:
        return math.inf
    e = f.params.tail_exponent
    return _refined_sup(lambda R: np.maximum(1.0, R) ** e * f.outer_mass(R), _probe_set(f, True))[0]


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def auxiliary_norm(f: RadialField, k: int) -> float:
    """sup over R of R^e times the weighted integral of f phi_k(x/R), phi_k a C1 cutoff."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    growth = f.tail_growth()
    if growth is not None and growth > 0:
        return math.inf
    e = f.params.tail_exponent
    widen = 1.0 + 1.0 / k

    def profile(R):
        out = np.empty(np.shape(R))
        for j, Rj in enumerate(np.atleast_1d(R)):
            if Rj <= 0:
                out[j] = 0.0
                continue
            ramp = f.weighted_integral(lambda r: smoothstep((r / Rj - 1.0) * k), Rj, Rj * widen)
            out[j] = Rj**e * (ramp + f.outer_mass(np.array([Rj * widen]))[0])
        return out

    base = _probe_set(f, False)
    _, arg = tail_seminorm_with_arg(f)
    probes = np.unique(np.concatenate([base, base / widen, [arg / widen]]))
    return _refined_sup(profile, probes)[0]


def tc_prime_profile(f: RadialField, x_values) -> np.ndarray:
    """Rows (|x|, weighted mass of the ball B_{|x|/2}(x), mass / |x|^{d-gamma-sigma/(1-m)})."""
    p = f.params
    x_values = np.asarray(x_values, dtype=float)
    if np.any(x_values <= 0):
        raise ParameterError("x values must be positive")
    k = p.d - 1.0 - p.gamma

    def cap_fraction(r, rho):
        s2 = -(r - 0.5 * rho) * (r - 1.5 * rho) * (r + 0.5 * rho) * (r + 1.5 * rho) / (2.0 * r * rho) ** 2
        s2 = np.clip(s2, 0.0, 1.0)
        return 0.5 * betainc(0.5 * (p.d - 1), 0.5, s2)

    rows = []
    for rho in x_values:
        lo, hi = 0.5 * rho, 1.5 * rho
        brk = f.grid[(f.grid > lo) & (f.grid < hi)]
        if brk.size > 100:
            brk = brk[:: int(math.ceil(brk.size / 100))]
        val, _ = quad(
            lambda r: float(f(np.array([r]))[0]) * r**k * float(cap_fraction(r, rho)),
            lo,
            hi,
            points=brk if brk.size else None,
            limit=400,
            epsabs=1e-9,
            epsrel=1e-10,
        )
        mass = p.sphere_area * val
        rows.append((rho, mass, mass / rho ** (p.dim_weighted - p.tail_power)))
    return np.array(rows)


@dataclass
class TailReport:
    seminorm: float
    l1gamma: float
    norm_x: float
    classification: str
    measured_exponent: float
    argmax_r: float
    profile_slope: float = math.nan
    growth_radius: float = math.nan
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        def enc(x: float):
            return "inf" if math.isinf(x) else x

        return {
            "seminorm": enc(self.seminorm),
            "l1gamma": enc(self.l1gamma),
            "norm_x": enc(self.norm_x),
            "class": self.classification,
            "measured_exponent": self.measured_exponent,
            "argmax_r": "diverging as R->inf" if math.isinf(self.argmax_r) else self.argmax_r,
            "profile_slope": self.profile_slope,
            "growth_radius": self.growth_radius,
            "notes": list(self.notes),
        }


def _loglog_slope(R: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    ok = y > 0
    if ok.sum() < 2:
        return math.nan, math.nan
    x, ly = np.log(R[ok]), np.log(y[ok])
    slope, icpt = np.polyfit(x, ly, 1)
    return float(slope), float(np.max(np.abs(ly - (slope * x + icpt))))


def classify(f: TailSource, threshold: float = SLOPE_THRESHOLD) -> TailReport:
    p = f.params
    e = p.tail_exponent
    l1 = f.l1gamma()
    semi, arg = tail_seminorm_with_arg(f)
    notes: list[str] = []
    growth = f.tail_growth()
    window = f.fit_window()
    if window is None and f.tail is not None:
        start = f.tail_start()
        window = (start, 100.0 * start)
    if window is not None:
        R = np.logspace(np.log10(window[0]), np.log10(window[1]), 129)
        outer = f.outer_mass(R)
        measured, _ = _loglog_slope(R, outer) if np.all(np.isfinite(outer)) else (math.nan, 0)
        slope, resid = _loglog_slope(R, R**e * outer) if np.all(np.isfinite(outer)) else (math.inf, 0)
    else:
        measured = slope = resid = math.nan

    if growth is not None:
        slope = growth
        cls = "Xc" if growth > 0 else "X"
        measured = f.tail.exponent + p.dim_weighted
        notes.append("decided by the analytic tail extension")
    elif window is None:
        cls = "X"
        notes.append("compact support: the profile vanishes beyond the last sample")
    elif not math.isfinite(slope):
        cls = "undecided"
    elif slope > threshold:
        cls = "Xc"
    elif slope < -threshold or resid <= 0.1:
        cls = "X"
    else:
        cls = "undecided"
    norm = math.inf if cls == "Xc" or math.isinf(semi) else max(l1, semi)
    if cls == "Xc":
        semi, arg = math.inf, math.inf
    return TailReport(
        seminorm=semi,
        l1gamma=l1,
        norm_x=norm,
        classification=cls,
        measured_exponent=measured,
        argmax_r=arg,
        profile_slope=slope,
        growth_radius=window[0] if (cls == "Xc" and window is not None) else math.nan,
        notes=notes,
    )


# -- pathological members of X ---------------------------------------------------


class BumpTrain(TailSource):
    """Sum over N >= 2 of indicator(B_{N^-2}(x_N)) N^{-(2/(1-m)-1)}, |x_N| = N.

    Not radial: outer masses are exact (ball/sphere intersections), the
    pointwise evaluator works along the ray through the centres. The series is
    cut at ``n_max``; :meth:`truncation_bound` bounds the seminorm change.
    """

    truncated = True

    def __init__(self, params: ParameterSet, n_max: int = 10_000):
        if params.gamma != 0 or params.beta != 0:
            raise ParameterError("the bump train is defined for gamma = beta = 0")
        self.params = params
        self.n_max = int(n_max)
        self.N = np.arange(2, self.n_max + 1, dtype=float)
        self.radius = self.N**-2.0
        self.height = self.N ** -(2.0 / (1.0 - params.m) - 1.0)
        unit_ball = params.sphere_area / params.d
        self.mass = self.height * unit_ball * self.radius**params.d
        self._suffix = np.concatenate([np.cumsum(self.mass[::-1])[::-1], [0.0]])

    def section(self, r):
        """Values along the ray through the bump centres."""
        r = np.asarray(r, dtype=float)
        n = np.rint(r)
        inside = (n >= 2) & (n <= self.n_max) & (np.abs(r - n) < n**-2.0)
        return np.where(inside, np.maximum(n, 2) ** -(2.0 / (1.0 - self.params.m) - 1.0), 0.0)

    def peak_ratios(self, N) -> np.ndarray:
        """Value at the centre of bump N times |x_N|^{sigma/(1-m)}."""
        N = np.asarray(N, dtype=float)
        return self.section(N) * N**self.params.tail_power

    def _cut_mass(self, j: int, R: float) -> float:
        """Mass of bump j outside B_R when the sphere of radius R crosses it."""
        p = self.params
        c, rho = self.N[j], self.radius[j]
        # r = c + rho x with x in [x_lo, 1]; Gauss-Legendre in x
        x_lo = max(-1.0, (R - c) / rho)
        x = 0.5 * (1.0 - x_lo) * (_GL64_X + 1.0) + x_lo
        r = c + rho * x
        s2 = rho * rho * (1.0 - x * x) * ((r + c) ** 2 - rho * rho) / (2.0 * r * c) ** 2
        frac = 0.5 * betainc(0.5 * (p.d - 1), 0.5, np.clip(s2, 0.0, 1.0))
        val = 0.5 * (1.0 - x_lo) * rho * np.sum(_GL64_W * r ** (p.d - 1) * frac)
        return float(self.height[j] * p.sphere_area * val)

    def outer_mass(self, R) -> np.ndarray:
        R = np.atleast_1d(np.asarray(R, dtype=float))
        out = np.empty_like(R)
        for i, Ri in enumerate(R):
            j = int(np.searchsorted(self.N - self.radius, Ri, side="left"))
            total = self._suffix[j]  # bumps entirely outside B_R
            if j > 0 and Ri < self.N[j - 1] + self.radius[j - 1]:
                total += self._cut_mass(j - 1, Ri)
            out[i] = total
        return out

    def l1gamma(self) -> float:
        return float(self._suffix[0])

    def probe_radii(self) -> np.ndarray:
        upto = self.N[self.N <= self.n_max / 10]
        rad = upto**-2.0
        pts = np.concatenate([upto - rad, upto, upto + rad, np.geomspace(0.1, 1.9, 16)])
        return np.unique(pts)

    def fit_window(self) -> tuple[float, float]:
        return self.n_max / 1000.0, self.n_max / 10.0

    def truncation_bound(self, n_cut: int) -> float:
        """Upper bound on |f - f_{n_cut}|_X where f_{n_cut} keeps bumps N <= n_cut."""
        e = self.params.tail_exponent
        N = self.N[self.N > n_cut]
        tail = np.sum((N + 1.0) ** e * self.mass[self.N > n_cut])
        # remainder beyond n_max: integral comparison of the summand
        a = 2.0 / (1.0 - self.params.m) - 1.0 + 2.0 * self.params.d - e
        unit_ball = self.params.sphere_area / self.params.d
        rest = unit_ball * 2.0**e * self.n_max ** (1.0 - a) / (a - 1.0)
        return float(tail + rest)

    def truncated_at(self, n_cut: int) -> "BumpTrain":
        return BumpTrain(self.params, n_cut)


class AnnuliTrain(TailSource):
    """Radial sum over N >= 2 of indicator(N <= |y| <= N + N^-alpha) / |N - |y||^eta."""

    truncated = True

    def __init__(self, params: ParameterSet, eta: float, alpha: float, n_max: int = 10_000):
        if not 0 < eta < 1:
            raise ParameterError(f"eta must lie in (0, 1), got {eta}")
        if not (1.0 - eta) * alpha > params.tail_power:
            raise ParameterError(
                f"need (1-eta) alpha > sigma/(1-m) = {params.tail_power:.6g}, got {(1 - eta) * alpha:.6g}"
            )
        self.params, self.eta, self.alpha, self.n_max = params, eta, alpha, int(n_max)
        self.N = np.arange(2, self.n_max + 1, dtype=float)
        self.width = self.N**-alpha
        nodes, weights = roots_jacobi(12, 0.0, -eta)
        self._nodes, self._weights = nodes, weights
        full = self._shell_integral(self.N, np.zeros_like(self.N), self.width)
        self.mass = params.sphere_area * full
        self._suffix = np.concatenate([np.cumsum(self.mass[::-1])[::-1], [0.0]])

    def _shell_integral(self, N, s_lo, s_hi):
        """Integral of s^{-eta} (N+s)^k ds over [s_lo, s_hi], k = d-1-gamma."""
        k = self.params.d - 1.0 - self.params.gamma
        out = np.empty_like(N)
        for i, (n, lo, hi) in enumerate(zip(N, s_lo, s_hi)):
            if lo == 0.0:
                # Gauss-Jacobi with weight (1+x)^{-eta} on [-1, 1] mapped to [0, hi]
                s = 0.5 * hi * (self._nodes + 1.0)
                out[i] = (0.5 * hi) ** (1.0 - self.eta) * np.sum(self._weights * (n + s) ** k)
            else:
                out[i] = quad(lambda s: s**-self.eta * (n + s) ** k, lo, hi, epsabs=0, epsrel=1e-12)[0]
        return out

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        n = np.floor(r)
        inside = (n >= 2) & (n <= self.n_max) & (r - n <= np.maximum(n, 1) ** -self.alpha) & (r > n)
        with np.errstate(divide="ignore"):
            return np.where(inside, np.abs(r - n) ** -self.eta, 0.0)

    def midshell_ratios(self, N) -> np.ndarray:
        """Value at the middle of shell N times r^{sigma/(1-m)}.

        Evaluated in the shell coordinate s = |y| - N, since the shells are far
        thinner than the spacing of doubles near N.
        """
        N = np.asarray(N, dtype=float)
        s = 0.5 * N**-self.alpha
        return s**-self.eta * (N + s) ** self.params.tail_power

    def outer_mass(self, R) -> np.ndarray:
        R = np.atleast_1d(np.asarray(R, dtype=float))
        out = np.empty_like(R)
        for i, Ri in enumerate(R):
            j = int(np.searchsorted(self.N + self.width, Ri, side="right"))
            total = self._suffix[j]
            if j < self.N.size and Ri > self.N[j]:
                # sphere of radius R cuts shell j: replace its full mass by the part outside
                part = self._shell_integral(self.N[j : j + 1], np.array([Ri - self.N[j]]), self.width[j : j + 1])
                total += self.params.sphere_area * part[0] - self.mass[j]
            out[i] = total
        return out

    def l1gamma(self) -> float:
        return float(self._suffix[0])

    def probe_radii(self) -> np.ndarray:
        upto = self.N[self.N <= self.n_max / 10]
        return np.unique(np.concatenate([upto, upto + 0.5 * upto**-self.alpha, np.geomspace(0.1, 1.9, 16)]))

    def fit_window(self) -> tuple[float, float]:
        return self.n_max / 1000.0, self.n_max / 10.0


def make_bad_function(p: ParameterSet, kind: str, **options) -> TailSource:
    if kind == "bump-train":
        return BumpTrain(p, **options)
    if kind == "radial-annuli":
        eta = options.pop("eta", 0.5)
        alpha = options.pop("alpha", p.tail_power / (1.0 - eta) + 1.0)
        return AnnuliTrain(p, eta, alpha, **options)
    raise ParameterError(f"unknown construction {kind!r}")


def cutoff_family_gap(p: ParameterSet, epsilon: float, r: float) -> tuple[float, float]:
    """For f = |x|^{-sigma/(1-m)} outside B_1 plus |x|^{-(d-gamma)-eps} inside, and f_r
    the same with the inner piece removed on B_r: returns (|f_r - f|_X, L1_gamma of f_r - f).

    The difference is |x|^{-(d-gamma)-eps} on B_r, whose outer mass beyond R < r is
    omega (R^-eps - r^-eps)/eps; the sup of R^e times that is reached at
    R = r ((e - eps)/e)^{1/eps}. The weighted L1 norm of the difference is infinite.
    """
    e = p.tail_exponent
    if not 0 < epsilon < e:
        raise ParameterError(f"epsilon must lie in (0, {e:.6g})")
    if not 0 < r <= 1:
        raise ParameterError("r must lie in (0, 1]")
    R = r * ((e - epsilon) / e) ** (1.0 / epsilon)
    gap = p.sphere_area / epsilon * R**e * (R**-epsilon - r**-epsilon)
    return float(gap), math.inf


# -- CSV interchange -------------------------------------------------------------


def write_field_csv(f: RadialField, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if f.tail is not None:
            fh.write(f"# tail_exponent={f.tail.exponent:.17g}\n")
            fh.write(f"# tail_coefficient={f.tail.coefficient:.17g}\n")
        fh.write(f"# truncated={str(f.truncated).lower()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "value"])
        for r, v in zip(f.grid, f.values):
            w.writerow([f"{r:.17g}", f"{v:.17g}"])


def read_field_csv(path: str | Path, params: ParameterSet) -> RadialField:
    meta: dict[str, str] = {}
    rows: list[tuple[float, float]] = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
                continue
            if line.startswith("r,"):
                continue
            a, b = line.split(",")[:2]
            rows.append((float(a), float(b)))
    arr = np.array(rows)
    tail = None
    if "tail_exponent" in meta:
        tail = PowerTail(float(meta["tail_exponent"]), float(meta["tail_coefficient"]))
    truncated = meta.get("truncated", "false") == "true"
    return RadialField(params, arr[:, 0], arr[:, 1], tail, truncated)


def with_tail(f: RadialField, exponent: float) -> RadialField:
    """Attach a power-law extension matching the last sample."""
    return RadialField(f.params, f.grid, f.values, PowerTail(exponent, f.values[-1] / f.grid[-1] ** exponent))


__all__ = [
    "AnnuliTrain",
    "BumpTrain",
    "PowerTail",
    "RadialField",
    "TailReport",
    "TailSource",
    "auxiliary_norm",
    "classify",
    "cutoff_family_gap",
    "indicator_field",
    "make_bad_function",
    "read_field_csv",
    "smoothstep",
    "tail_norm",
    "tail_norm_direct",
    "tail_seminorm",
    "tail_seminorm_with_arg",
    "tc_prime_profile",
    "weighted_outer_mass",
    "with_tail",
    "write_field_csv",
]
