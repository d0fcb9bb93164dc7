"""Radial finite-volume solver for u_t = |x|^gamma div(|x|^-beta grad u^m).

Cells are annuli of a logarithmic grid. Cell masses use the exact weighted
volume of each annulus; face fluxes r^{d-1-beta} d_r(u^m) are discretized in
s = log r, where the cell centres are equally spaced. Both boundary faces are
no-flux, so the weighted mass is conserved exactly by the discrete system.

Each implicit Euler step freezes a = m u^{m-1} inside an inner iteration and
solves a tridiagonal system for the new value of w = u^m. The unknown is w
rather than u because w -> w^{1/m} is convex, which keeps iterates positive.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .errors import GridError, NegativeState, NonConvergence, SolverError
from .params import ParameterSet, r_star, validate_parameters
from .tailspace import RadialField, TailSource, read_field_csv, write_field_csv

COEFFICIENT_FLOOR = 1e-30
# the convergence test is relative in every cell above this fraction of the peak,
# so far-tail values are resolved to full relative accuracy too
RELATIVE_FLOOR = 1e-200

@dataclass(frozen=True)
class RadialGrid:
    params: ParameterSet
    faces: np.ndarray
    centers: np.ndarray
    volumes: np.ndarray  # weighted: integral of |x|^-gamma over the annulus
    transmissibility: np.ndarray  # interior faces, |S^{d-1}| f^{d-2-beta} / ds
    cells_per_decade: int

    @property
    def size(self) -> int:
        return self.centers.size

    @property
    def r_min(self) -> float:
        return float(self.faces[0])

    @property
    def r_max(self) -> float:
        return float(self.faces[-1])

    def reliable_radius(self, guard_decades: float = 2.0) -> float:
        """Radius below which the no-flux outer boundary is assumed not to contaminate."""
        return self.r_max * 10.0**-guard_decades

    def scaled(self, lam: float) -> "RadialGrid":
        return _grid_from_faces(self.params, self.faces * lam, self.cells_per_decade)

    def spec(self) -> dict:
        return {"r_min": self.r_min, "r_max": self.r_max, "cells_per_decade": self.cells_per_decade}


def _grid_from_faces(p: ParameterSet, faces: np.ndarray, cpd: int) -> RadialGrid:
    centers = np.sqrt(faces[:-1] * faces[1:])
    k = p.dim_weighted
    # telescoping antiderivative |S| r^{d-gamma}/(d-gamma); the ratio form keeps precision
    volumes = p.sphere_area * faces[:-1] ** k * np.expm1(k * np.log(faces[1:] / faces[:-1])) / k
    ds = np.log(centers[1:] / centers[:-1])
    inner_faces = faces[1:-1]
    trans = p.sphere_area * inner_faces ** (p.d - 2.0 - p.beta) / ds
    for arr in (faces, centers, volumes, trans):
        arr.flags.writeable = False
    return RadialGrid(p, faces, centers, volumes, trans, cpd)


def build_grid(p: ParameterSet, r_min: float, r_max: float, cells_per_decade: int) -> RadialGrid:
    if not (0 < r_min < r_max) or not math.isfinite(r_max):
        raise GridError(f"need 0 < r_min < r_max, got r_min={r_min}, r_max={r_max}")
    if cells_per_decade < 8:
        raise GridError(f"cells_per_decade must be >= 8, got {cells_per_decade}")
    decades = math.log10(r_max / r_min)
    n = max(2, int(round(decades * cells_per_decade)))
    faces = np.logspace(math.log10(r_min), math.log10(r_max), n + 1)
    faces[0], faces[-1] = r_min, r_max
    return _grid_from_faces(p, faces, int(cells_per_decade))


def _flux_divergence(grid: RadialGrid, w: np.ndarray) -> np.ndarray:
    """Net inflow (A w)_i = sum of face fluxes, no-flux at both ends."""
    flux = grid.transmissibility * np.diff(w)  # flux at interior faces, positive outward-in
    out = np.zeros_like(w)
    out[:-1] += flux
    out[1:] -= flux
    return out


def _values(grid: RadialGrid, u) -> np.ndarray:
    if isinstance(u, RadialField):
        if u.grid.size == grid.size and np.allclose(u.grid, grid.centers, rtol=1e-12, atol=0):
            return np.array(u.values)
        return np.asarray(u(grid.centers))
    return np.asarray(u, dtype=float)


def project_field(grid: RadialGrid, f: TailSource) -> np.ndarray:
    """Cell averages of f: weighted cell masses over weighted volumes.

    Cell masses are differences of outer masses, except in cells so small that
    the difference cancels; those use 8-point Gauss-Legendre in log r.
    """
    outer = f.outer_mass(grid.faces)
    mass = np.maximum(-np.diff(outer), 0.0)
    small = mass < 1e-6 * outer[:-1]
    if np.any(small):
        p = grid.params
        nodes, weights = np.polynomial.legendre.leggauss(8)
        lo, hi = np.log(grid.faces[:-1][small]), np.log(grid.faces[1:][small])
        half = 0.5 * (hi - lo)
        s = 0.5 * (hi + lo)[:, None] + half[:, None] * nodes
        r = np.exp(s)
        integrand = f(r.ravel()).reshape(r.shape) * r**p.dim_weighted
        mass[small] = p.sphere_area * half * (integrand @ weights)
    return mass / grid.volumes


def apply_operator(grid: RadialGrid, u) -> np.ndarray:
    """Finite-volume L(u^m) per cell: net face flux over the weighted cell volume.

    Returned as a plain array since the result is signed.
    """
    v = _values(grid, u)
    if np.any(v < 0):
        raise ValueError("operator needs a nonnegative state")
    return _flux_divergence(grid, v**grid.params.m) / grid.volumes


@dataclass
class StepInfo:
    iterations: int
    increment: float


def step(grid: RadialGrid, u, dt: float, tol: float = 1e-10, max_iter: int = 100) -> RadialField:
    """One implicit Euler step u_new - dt L(u_new^m) = u."""
    values, _ = step_values(grid, u, dt, tol, max_iter)
    return RadialField(grid.params, grid.centers, values, truncated=True)


def step_values(
    grid: RadialGrid,
    u,
    dt: float,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> tuple[np.ndarray, StepInfo]:
    if not dt > 0:
        raise SolverError(f"dt must be positive, got {dt}")
    m = grid.params.m
    u_old = _values(grid, u)
    if np.any(u_old < 0):
        raise NegativeState("step needs a nonnegative state")
    T = grid.transmissibility
    vdt = grid.volumes / dt
    side = np.zeros(grid.size)
    side[:-1] += T
    side[1:] += T
    ab = np.zeros((3, grid.size))
    ab[0, 1:] = -T
    ab[2, :-1] = -T
    if not np.any(u_old > 0):
        return u_old.copy(), StepInfo(0, 0.0)
    u_it = u_old.copy()
    w = u_it**m
    increment = math.inf
    for it in range(1, max_iter + 1):
        # 1/a = u^{1-m}/m stays bounded, so only exact zeros need the floor
        inv_a = np.where(u_it > 0, u_it, COEFFICIENT_FLOOR) ** (1.0 - m) / m
        ab[1] = vdt * inv_a + side
        rhs = vdt * (u_old - u_it + w * inv_a)
        w_new = solve_banded((1, 1), ab, rhs, overwrite_ab=False, check_finite=False)
        wmax = float(np.max(w_new))
        if np.min(w_new) < -1e-14 * wmax:
            raise NegativeState(f"linear solve produced {np.min(w_new):.3e} (max {wmax:.3e})")
        w_new = np.maximum(w_new, 0.0)
        denom = np.maximum(w_new, RELATIVE_FLOOR * wmax)
        increment = float(np.max(np.abs(w_new - w) / denom))
        w = w_new
        u_it = w ** (1.0 / m)
        if increment <= tol:
            return u_it, StepInfo(it, increment)
    raise NonConvergence(f"inner iteration stalled at increment {increment:.3e} after {max_iter} iterations")


@dataclass
class AuditRecord:
    time: float
    mass: float
    min_value: float
    dt: float
    iterations: int
    boundary_flux: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Trajectory:
    params: ParameterSet
    grid: RadialGrid
    times: np.ndarray
    states: list[np.ndarray]
    audits: list[AuditRecord]
    step_log: dict[str, np.ndarray] = field(default_factory=dict)
    variables: str = "physical"
    scales: np.ndarray | None = None  # per-snapshot length scale (self-similar view)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    def grid_at(self, i: int) -> RadialGrid:
        return self.grid if self.scales is None else self.grid.scaled(float(self.scales[i]))

    def radii(self, i: int) -> np.ndarray:
        return self.grid_at(i).centers

    def field(self, i: int) -> RadialField:
        return RadialField(self.params, self.radii(i), self.states[i], truncated=True)

    def mass(self, i: int) -> float:
        return float(np.sum(self.grid_at(i).volumes * self.states[i]))

    def reliable_radius(self, i: int) -> float:
        scale = 1.0 if self.scales is None else float(self.scales[i])
        return scale * self.grid.reliable_radius(self.meta.get("guard_decades", 2.0))


def solve(
    p: ParameterSet,
    grid: RadialGrid,
    u0,
    t_end: float,
    output_times=None,
    *,
    dt0: float | None = None,
    dt_rel: float = 0.01,
    t_ref: float = 1.0,
    fixed_dt: float | None = None,
    tol: float = 1e-10,
    iter_range: tuple[int, int] = (3, 8),
    dt_min: float = 1e-14,
) -> Trajectory:
    """Integrate from t=0 to t_end, stopping exactly at each output time.

    The step grows while the inner iteration count sits at the low end of
    ``iter_range``, halves above it, and is capped at dt_rel (t + t_ref). ``fixed_dt`` disables adaptation (used in
    refinement studies).
    """
    if grid.params != p:
        raise SolverError("grid built for a different parameter set")
    u = _values(grid, u0).copy()
    if np.any(u < 0) or not np.all(np.isfinite(u)):
        raise SolverError("initial data must be finite and nonnegative", 0.0)
    if output_times is None:
        output_times = [t_end]
    outs = np.unique(np.asarray(output_times, dtype=float))
    if outs[0] < 0 or outs[-1] > t_end * (1 + 1e-12):
        raise SolverError("output times must lie in [0, t_end]")
    times, states, audits = [], [], []
    log_t, log_dt, log_it, log_mass = [], [], [], []
    mass0 = float(np.sum(grid.volumes * u))

    def record(t: float, dt: float, iters: int) -> None:
        times.append(t)
        states.append(u.copy())
        w = u**p.m
        edge_flux = abs(grid.transmissibility[-1] * (w[-1] - w[-2]))
        audits.append(
            AuditRecord(
                time=t,
                mass=float(np.sum(grid.volumes * u)),
                min_value=float(np.min(u)),
                dt=dt,
                iterations=iters,
                boundary_flux=edge_flux / max(mass0, 1e-300),
            )
        )

    t = 0.0
    k = 0
    if outs[0] == 0.0:
        record(0.0, 0.0, 0)
        k = 1
    dt = fixed_dt or dt0 or dt_rel * t_ref * 0.1
    max_iters_since = 0
    lo_it, hi_it = iter_range
    while k < outs.size:
        target = outs[k]
        while t < target * (1 - 1e-14):
            if fixed_dt is None:
                dt = min(dt, dt_rel * (t + t_ref))
            h = min(dt, target - t)
            if target - t - h < 1e-3 * h:
                h = target - t  # avoid a sliver step before the output time
            try:
                u_new, info = step_values(grid, u, h, tol=tol)
            except (NonConvergence, NegativeState) as exc:
                if fixed_dt is not None or h <= dt_min:
                    raise type(exc)(str(exc), t) from exc
                dt = 0.5 * h
                continue
            u = u_new
            t = target if target - t <= h * (1 + 1e-12) else t + h
            max_iters_since = max(max_iters_since, info.iterations)
            log_t.append(t)
            log_dt.append(h)
            log_it.append(info.iterations)
            log_mass.append(float(np.sum(grid.volumes * u)))
            if fixed_dt is None and h == dt:
                if info.iterations <= lo_it:
                    dt *= 1.25
                elif info.iterations > hi_it:
                    dt *= 0.5
        record(float(target), float(log_dt[-1]) if log_dt else 0.0, max_iters_since)
        max_iters_since = 0
        k += 1
    return Trajectory(
        params=p,
        grid=grid,
        times=np.array(times),
        states=states,
        audits=audits,
        step_log={
            "t": np.array(log_t),
            "dt": np.array(log_dt),
            "iterations": np.array(log_it, dtype=int),
            "mass": np.array(log_mass),
        },
        meta={"initial_mass": mass0},
    )


def max_mass_drift(traj: Trajectory) -> tuple[float, float]:
    """(largest per-step relative drift, total relative drift) from the step log."""
    m0 = traj.meta.get("initial_mass", traj.mass(0))
    masses = np.concatenate([[m0], traj.step_log.get("mass", np.array([]))])
    if masses.size < 2:
        return 0.0, 0.0
    per_step = np.max(np.abs(np.diff(masses))) / m0
    return float(per_step), float(abs(masses[-1] - m0) / m0)


def _selfsimilar_scale(p: ParameterSet, t: float) -> tuple[float, float]:
    """(R(t), tau) with R(t) = R_star(t + 1)."""
    R = r_star(t + 1.0, p)
    tau = math.log(R / r_star(1.0, p)) / p.sigma
    return R, tau


def to_selfsimilar(traj: Trajectory) -> Trajectory:
    """v(tau, y) = (R/zeta)^{d-gamma} u(t, x), y = zeta x / R, R = R_star(t+1)."""
    if traj.variables != "physical":
        raise SolverError("trajectory is already in self-similar variables")
    p = traj.params
    taus, scales, states = [], [], []
    for t, u in zip(traj.times, traj.states):
        R, tau = _selfsimilar_scale(p, float(t))
        taus.append(tau)
        scales.append(p.zeta / R)
        states.append((R / p.zeta) ** p.dim_weighted * u)
    meta = dict(traj.meta, physical_times=[float(t) for t in traj.times])
    return Trajectory(
        params=p,
        grid=traj.grid,
        times=np.array(taus),
        states=states,
        audits=traj.audits,
        step_log=traj.step_log,
        variables="selfsimilar",
        scales=np.array(scales),
        meta=meta,
    )


def from_selfsimilar(traj: Trajectory) -> Trajectory:
    if traj.variables != "selfsimilar":
        raise SolverError("trajectory is not in self-similar variables")
    p = traj.params
    times = np.array(traj.meta["physical_times"])
    states = []
    for t, v in zip(times, traj.states):
        R, _ = _selfsimilar_scale(p, float(t))
        states.append((p.zeta / R) ** p.dim_weighted * v)
    meta = {k: v for k, v in traj.meta.items() if k != "physical_times"}
    return Trajectory(p, traj.grid, times, states, traj.audits, traj.step_log, "physical", None, meta)


# -- persistence -------------------------------------------------------------------


def save_trajectory(traj: Trajectory, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(len(traj)):
        name = f"snapshot_{i:04d}.csv"
        write_field_csv(traj.field(i), directory / name)
        files.append(name)
    per_step, total = max_mass_drift(traj)
    manifest = {
        "params": traj.params.as_dict(),
        "grid": traj.grid.spec(),
        "variables": traj.variables,
        "times": [float(t) for t in traj.times],
        "scales": None if traj.scales is None else [float(s) for s in traj.scales],
        "snapshots": files,
        "audits": [a.to_json() for a in traj.audits],
        "audit_summary": {
            "steps": int(traj.step_log.get("t", np.array([])).size),
            "max_step_mass_drift": per_step,
            "total_mass_drift": total,
            "min_value": float(min(a.min_value for a in traj.audits)) if traj.audits else None,
            "max_boundary_flux": float(max(a.boundary_flux for a in traj.audits)) if traj.audits else None,
        },
        "meta": {k: v for k, v in traj.meta.items() if _jsonable(v)},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def load_trajectory(directory: str | Path) -> Trajectory:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    pd = manifest["params"]
    p = validate_parameters(pd["d"], pd["gamma"], pd["beta"], pd["m"])
    g = manifest["grid"]
    grid = build_grid(p, g["r_min"], g["r_max"], g["cells_per_decade"])
    states = [read_field_csv(directory / name, p).values for name in manifest["snapshots"]]
    audits = [AuditRecord(**a) for a in manifest["audits"]]
    scales = manifest.get("scales")
    return Trajectory(
        params=p,
        grid=grid,
        times=np.array(manifest["times"]),
        states=[np.array(s) for s in states],
        audits=audits,
        variables=manifest.get("variables", "physical"),
        scales=None if scales is None else np.array(scales),
        meta=manifest.get("meta", {}),
    )
