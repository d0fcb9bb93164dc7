"""Experiment runner: TOML config in, trajectory plus JSON/CSV reports out.

Config sections: [params] [grid] [initial] [time] [checks] [output], and
[profiles] for the ``profiles`` subcommand. Physics keys have no defaults and
unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .diagnostics import (
    csiszar_kullback_check,
    entropy_production_check,
    entropy_series,
    rate_fit,
    relative_error,
)
from .errors import ConfigError, IoError, SolverError, WfdeError
from .harnack import KAPPA_NAMES, KappaConstants, verify_sandwich
from .params import ParameterSet, validate_parameters
from .profiles import (
    SubsolutionSpec,
    SupersolutionSpec,
    barenblatt_at,
    no_rates_data,
    reference_mass,
    stationary_profile,
    subsolution,
    supersolution,
    w0_profile,
)
from .solver import Trajectory, build_grid, max_mass_drift, project_field, save_trajectory, solve, to_selfsimilar
from .tailspace import RadialField, classify, indicator_field, read_field_csv, with_tail, write_field_csv

REQUIRED = object()

# key -> (kind, default); REQUIRED marks keys without a default
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "params": {"d": ("int", REQUIRED), "gamma": ("float", REQUIRED), "beta": ("float", REQUIRED), "m": ("float", REQUIRED)},
    "grid": {"r_min": ("float", REQUIRED), "r_max": ("float", REQUIRED), "cells_per_decade": ("int", REQUIRED)},
    "time": {
        "t_end": ("float", REQUIRED),
        "outputs": ("int", REQUIRED),
        "t0": ("float", None),
        "log_spaced": ("bool", True),
        "dt_rel": ("float", 0.01),
        "t_ref": ("float", 1.0),
        "fixed_dt": ("float", None),
    },
    "output": {"directory": ("str", "wfde-out"), "formats": ("str", "both")},
}

INITIAL_KINDS: dict[str, dict[str, tuple[str, object]]] = {
    "barenblatt": {"mass": ("mass", REQUIRED), "shift": ("float", REQUIRED)},
    "perturbed-barenblatt": {
        "mass": ("mass", REQUIRED),
        "shift": ("float", REQUIRED),
        "amplitude": ("float", REQUIRED),
        "width": ("float", REQUIRED),
    },
    "indicator": {"radius": ("float", REQUIRED), "height": ("float", REQUIRED)},
    "w0": {},
    "no-rates": {"delta": ("float", REQUIRED), "position": ("float", 0.25)},
}

_BRACKET = {
    "A": ("float", REQUIRED), "B": ("float", REQUIRED), "epsilon": ("float", REQUIRED), "t0": ("float", REQUIRED),
    "E": ("float", REQUIRED), "F": ("float", REQUIRED), "H": ("float", REQUIRED),
}

CHECKS: dict[str, dict[str, tuple[str, object]]] = {
    "mass": {"tolerance": ("float", 1e-6)},
    "sandwich-empirical": {
        "t0": ("float", None), "t1": ("float", None), "tau_max": ("float", None),
        "n_mass": ("int", 8), "resolution": ("float", 1e-3),
    },
    "sandwich-analytic": {
        "t0": ("float", None), "t1": ("float", None), "R0": ("float", 1.0),
        **{name: ("float", None) for name in KAPPA_NAMES},
    },
    "relative-error": {"region": ("str", "whole"), "upsilon": ("float", 1.0), "threshold": ("float", 0.05)},
    "rates": {"window": ("floatlist", REQUIRED), "slope_range": ("floatlist", REQUIRED)},
    "entropy": {
        "window": ("floatlist", None), "mismatch_tolerance": ("float", 0.05),
        "min_rate": ("float", 3.6), "tolerance": ("float", 1e-10),
    },
    "tail-exponent": {
        "r_window": ("floatlist", REQUIRED), "target": ("float", REQUIRED),
        "tolerance": ("float", REQUIRED), "t_window": ("floatlist", None),
    },
    "bracket": _BRACKET,
}

PROFILE_KINDS: dict[str, dict[str, tuple[str, object]]] = {
    "barenblatt": {"mass": ("mass", REQUIRED), "shift": ("float", REQUIRED)},
    "stationary": {"mass": ("mass", REQUIRED)},
    "w0": {},
    "bracket": _BRACKET,
}

FORMATS = ("csv", "json", "both")


@dataclass
class ExperimentConfig:
    params: ParameterSet
    grid: dict
    initial: dict
    time: dict
    checks: dict[str, dict]
    output: dict
    profiles: dict | None = None
    raw: dict = dataclasses.field(default_factory=dict)

    def resolved(self) -> dict:
        out = {
            "params": self.params.as_dict(),
            "grid": self.grid,
            "initial": self.initial,
            "time": self.time,
            "checks": self.checks,
            "output": self.output,
        }
        if self.profiles is not None:
            out["profiles"] = self.profiles
        return jsonable(out)


# -- parsing -----------------------------------------------------------------------


def _coerce(kind: str, value, key: str):
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if kind == "mass":
        if value == "reference":
            return value
        return _coerce("float", value, key)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", key)
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    if kind == "floatlist":
        if not isinstance(value, list) or len(value) != 2:
            raise ConfigError(f"expected a two-element list, got {value!r}", key)
        return [_coerce("float", v, key) for v in value]
    raise AssertionError(kind)


def _table(data: dict, schema: dict, path: str, skip: tuple[str, ...] = ()) -> dict:
    if not isinstance(data, dict):
        raise ConfigError("expected a table", path)
    for key in data:
        if key not in schema and key not in skip:
            raise ConfigError("unknown key", f"{path}.{key}")
    out = {}
    for key, (kind, default) in schema.items():
        if key in data:
            out[key] = _coerce(kind, data[key], f"{path}.{key}")
        elif default is REQUIRED:
            raise ConfigError("missing required key", f"{path}.{key}")
        else:
            out[key] = default
    return out


def _kind_table(data: dict, kinds: dict, path: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError("expected a table", path)
    kind = data.get("kind", None)
    if kind is None:
        raise ConfigError("missing required key", f"{path}.kind")
    if kind not in kinds:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {sorted(kinds)}", f"{path}.kind")
    return {"kind": kind, **_table(data, kinds[kind], path, skip=("kind",))}


def parse_config(raw: dict, require_run: bool = True) -> ExperimentConfig:
    allowed = {"params", "grid", "initial", "time", "checks", "output", "profiles"}
    for key in raw:
        if key not in allowed:
            raise ConfigError("unknown section", key)
    if "params" not in raw:
        raise ConfigError("missing section", "params")
    pt = _table(raw["params"], SCHEMA["params"], "params")
    try:
        params = validate_parameters(pt["d"], pt["gamma"], pt["beta"], pt["m"])
    except WfdeError as exc:
        raise ConfigError(str(exc), "params") from exc
    grid = _table(raw.get("grid", {}), SCHEMA["grid"], "grid") if (require_run or "grid" in raw) else None
    output = _table(raw.get("output", {}), SCHEMA["output"], "output")
    if output["formats"] not in FORMATS:
        raise ConfigError(f"expected one of {FORMATS}", "output.formats")
    initial = time = None
    checks: dict[str, dict] = {}
    if require_run:
        for section in ("initial", "time"):
            if section not in raw:
                raise ConfigError("missing section", section)
        initial = _kind_table(raw["initial"], INITIAL_KINDS, "initial")
        time = _table(raw["time"], SCHEMA["time"], "time")
        checks = _parse_checks(raw.get("checks", {"names": []}))
    elif "time" in raw:
        time = _table(raw["time"], SCHEMA["time"], "time")
    profiles = None
    if "profiles" in raw:
        profiles = _kind_table(raw["profiles"], PROFILE_KINDS, "profiles")
    return ExperimentConfig(params, grid, initial, time, checks, output, profiles, raw)


def _parse_checks(data: dict) -> dict[str, dict]:
    if not isinstance(data, dict):
        raise ConfigError("expected a table", "checks")
    names = data.get("names", [])
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ConfigError("expected a list of check names", "checks.names")
    for i, name in enumerate(names):
        if name not in CHECKS:
            raise ConfigError(f"unknown check {name!r}; expected one of {sorted(CHECKS)}", f"checks.names[{i}]")
    for key in data:
        if key != "names" and key not in CHECKS:
            raise ConfigError("unknown check", f"checks.{key}")
    return {name: _table(data.get(name, {}), CHECKS[name], f"checks.{name}") for name in names}


def load_config(path: str | Path, require_run: bool = True) -> ExperimentConfig:
    try:
        raw = tomllib.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    return parse_config(raw, require_run)


# -- serialization -------------------------------------------------------------------


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings inf, -inf, nan."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(obj.to_json() if hasattr(obj, "to_json") else dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (frozenset, set)):
        return sorted(jsonable(v) for v in obj)
    return obj


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))  # shortest string that round-trips


def write_csv(path: Path, header: list[str], rows) -> None:
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_json(path: Path, payload: dict) -> None:
    try:
        path.write_text(json.dumps(jsonable(payload), indent=2, sort_keys=True, allow_nan=False) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# -- building the experiment ---------------------------------------------------------------


def _mass(p: ParameterSet, value) -> float:
    return reference_mass(p) if value == "reference" else float(value)


def initial_values(cfg: ExperimentConfig, grid) -> tuple[np.ndarray, object]:
    """Cell values on the grid and, where available, the datum as a TailSource-like object."""
    p, ini, r = cfg.params, cfg.initial, grid.centers
    kind = ini["kind"]
    if kind == "barenblatt":
        return barenblatt_at(p, _mass(p, ini["mass"]), ini["shift"], r), None
    if kind == "perturbed-barenblatt":
        base = barenblatt_at(p, _mass(p, ini["mass"]), ini["shift"], r)
        return base * (1.0 + ini["amplitude"] * np.exp(-((r / ini["width"]) ** 2))), None
    if kind == "indicator":
        f = indicator_field(p, ini["radius"], ini["height"])
        return project_field(grid, f), f
    if kind == "w0":
        return w0_profile(p, r), None
    if kind == "no-rates":
        return no_rates_data(p, ini["delta"], ini["position"])(r), None
    raise ConfigError(f"unknown kind {kind!r}", "initial.kind")


def output_times(time: dict) -> np.ndarray:
    n, t_end = time["outputs"], time["t_end"]
    if n < 1 or not t_end > 0:
        raise ConfigError("need outputs >= 1 and t_end > 0", "time")
    t0 = time["t0"] if time["t0"] is not None else (t_end * 1e-3 if time["log_spaced"] else t_end / n)
    if not 0 < t0 <= t_end:
        raise ConfigError("need 0 < t0 <= t_end", "time.t0")
    inner = np.geomspace(t0, t_end, n) if time["log_spaced"] else np.linspace(t0, t_end, n)
    return np.concatenate([[0.0], inner])


def simulate(cfg: ExperimentConfig) -> tuple[Trajectory, object]:
    try:
        grid = build_grid(cfg.params, cfg.grid["r_min"], cfg.grid["r_max"], cfg.grid["cells_per_decade"])
    except WfdeError as exc:
        raise ConfigError(str(exc), "grid") from exc
    u0, datum = initial_values(cfg, grid)
    times = output_times(cfg.time)
    tm = cfg.time
    traj = solve(
        cfg.params, grid, u0, float(times[-1]), times,
        dt_rel=tm["dt_rel"], t_ref=tm["t_ref"], fixed_dt=tm["fixed_dt"],
    )
    return traj, datum


# -- checks -------------------------------------------------------------------------------


@dataclass
class CheckResult:
    verdict: str
    result: dict
    header: list[str]
    rows: list


def _positive_times(traj: Trajectory) -> np.ndarray:
    return traj.times[traj.times > 0]


def check_mass(traj, datum, cfg, opts) -> CheckResult:
    per_step, total = max_mass_drift(traj)
    ok = total <= opts["tolerance"]
    rows = [(a.time, a.mass, a.min_value, a.dt, a.iterations) for a in traj.audits]
    return CheckResult("pass" if ok else "fail", {"max_step_drift": per_step, "total_drift": total},
                       ["t", "mass", "min_value", "dt", "iterations"], rows)


def _sandwich_window(traj, opts) -> tuple[float, float]:
    pos = _positive_times(traj)
    t0 = opts["t0"] if opts["t0"] is not None else float(pos[0])
    t1 = opts["t1"] if opts["t1"] is not None else float(pos[-1])
    return t0, t1


def _sandwich_result(report) -> CheckResult:
    rows = [(mg.t, mg.lower_margin, mg.upper_margin, "pass" if mg.ok else "fail") for mg in report.margins]
    return CheckResult(report.verdict, report.to_json(), ["t", "lower_margin", "upper_margin", "verdict"], rows)


def check_sandwich_empirical(traj, datum, cfg, opts) -> CheckResult:
    t0, t1 = _sandwich_window(traj, opts)
    report = verify_sandwich(traj, "empirical", t0=t0, t1=t1, tau_max=opts["tau_max"],
                             n_mass=opts["n_mass"], resolution=opts["resolution"])
    return _sandwich_result(report)


def check_sandwich_analytic(traj, datum, cfg, opts) -> CheckResult:
    if datum is None:
        raise ConfigError("analytic sandwich needs initial.kind = 'indicator'", "checks.sandwich-analytic")
    t0, t1 = _sandwich_window(traj, opts)
    given = {k: opts[k] for k in KAPPA_NAMES if opts[k] is not None}
    kappa = KappaConstants(**given, calibrated=frozenset(given))
    report = verify_sandwich(traj, "analytic", t0=t0, t1=t1, u0=datum, kappa=kappa, R0=opts["R0"])
    return _sandwich_result(report)


def check_relative_error(traj, datum, cfg, opts) -> CheckResult:
    series = relative_error(traj, opts["region"], opts["upsilon"])
    final = float(series.errors[-1])
    ok = final < opts["threshold"]
    return CheckResult("pass" if ok else "fail",
                       {"region": series.region, "upsilon": series.upsilon, "final_error": final},
                       ["t", "error"], series.rows())


def check_rates(traj, datum, cfg, opts) -> CheckResult:
    series = relative_error(traj, "whole")
    fit = rate_fit(series.rows(), tuple(opts["window"]))
    lo, hi = opts["slope_range"]
    ok = lo <= fit.slope <= hi
    return CheckResult("pass" if ok else "fail", dataclasses.asdict(fit), ["t", "error"], series.rows())


def check_entropy(traj, datum, cfg, opts) -> CheckResult:
    ss = to_selfsimilar(traj)
    series = entropy_series(ss)
    window = None if opts["window"] is None else tuple(opts["window"])
    prod = entropy_production_check(series, cfg.params, window, opts["tolerance"])
    ck = csiszar_kullback_check(series, cfg.params, traj.meta.get("initial_mass", traj.mass(0)))
    ok = (
        prod.verdict == "pass"
        and ck.verdict == "pass"
        and prod.production_mismatch <= opts["mismatch_tolerance"]
        and prod.decay_rate >= opts["min_rate"]
    )
    rows = [(r.tau, r.F, r.I, r.l1_distance, r.d_inf) for r in series]
    result = {"production": dataclasses.asdict(prod), "csiszar_kullback": {
        "constant": ck.constant, "min_margin": ck.min_margin, "verdict": ck.verdict}}
    return CheckResult("pass" if ok else "fail", result, ["tau", "F", "I", "l1_distance", "d_inf"], rows)


def check_tail_exponent(traj, datum, cfg, opts) -> CheckResult:
    lo, hi = opts["r_window"]
    t_lo, t_hi = opts["t_window"] if opts["t_window"] is not None else (0.0, math.inf)
    rows = []
    for i, t in enumerate(traj.times):
        if not (t > 0 and t_lo <= t <= t_hi):
            continue
        r = traj.radii(i)
        keep = (r >= lo) & (r <= hi)
        slope = float(np.polyfit(np.log(r[keep]), np.log(traj.states[i][keep]), 1)[0])
        rows.append((float(t), slope))
    ok = bool(rows) and all(abs(s - opts["target"]) <= opts["tolerance"] for _, s in rows)
    return CheckResult("pass" if ok else "fail", {"target": opts["target"], "slopes": rows}, ["t", "slope"], rows)


def _bracket_specs(p: ParameterSet, opts) -> tuple[SubsolutionSpec, SupersolutionSpec]:
    try:
        sub = SubsolutionSpec(p, opts["A"], opts["B"], opts["epsilon"], opts["t0"])
        sup = SupersolutionSpec(p, opts["E"], opts["F"], opts["epsilon"], opts["t0"], opts["H"])
    except WfdeError as exc:
        raise ConfigError(str(exc), "bracket") from exc
    return sub, sup


def check_bracket(traj, datum, cfg, opts) -> CheckResult:
    sub, sup = _bracket_specs(cfg.params, opts)
    rows = []
    for i, t in enumerate(traj.times):
        r, u = traj.radii(i), traj.states[i]
        lower = float(np.min(u - subsolution(sub, t, r)))
        upper = float(np.min(supersolution(sup, t, r) - u))
        rows.append((float(t), lower, upper, "pass" if lower >= 0 and upper >= 0 else "fail"))
    ok = all(row[3] == "pass" for row in rows)
    return CheckResult("pass" if ok else "fail", {"snapshots": len(rows)},
                       ["t", "lower_margin", "upper_margin", "verdict"], rows)


CHECK_RUNNERS = {
    "mass": check_mass,
    "sandwich-empirical": check_sandwich_empirical,
    "sandwich-analytic": check_sandwich_analytic,
    "relative-error": check_relative_error,
    "rates": check_rates,
    "entropy": check_entropy,
    "tail-exponent": check_tail_exponent,
    "bracket": check_bracket,
}


# -- running ---------------------------------------------------------------------------


@dataclass
class RunOutcome:
    status: int
    verdicts: dict[str, str]
    results: dict[str, CheckResult]
    directory: Path


def run(cfg: ExperimentConfig, out: str | Path | None = None, formats: str | None = None) -> RunOutcome:
    """Simulate, run every requested check and persist the artifacts."""
    directory = Path(out if out is not None else cfg.output["directory"])
    formats = formats or cfg.output["formats"]
    if formats not in FORMATS:
        raise ConfigError(f"expected one of {FORMATS}", "output.formats")
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {directory}: {exc}") from exc
    traj, datum = simulate(cfg)
    try:
        save_trajectory(traj, directory / "trajectory")
    except OSError as exc:
        raise IoError(f"cannot write trajectory: {exc}") from exc
    config = cfg.resolved()
    results: dict[str, CheckResult] = {}
    for name, opts in cfg.checks.items():
        try:
            res = CHECK_RUNNERS[name](traj, datum, cfg, opts)
        except ConfigError:
            raise
        except WfdeError as exc:
            if isinstance(exc, SolverError):
                raise
            res = CheckResult("error", {"error": str(exc)}, [], [])
        results[name] = res
        report = {"check": name, "verdict": res.verdict, "version": __version__, "config": config, "result": res.result}
        if formats in ("json", "both"):
            report["series"] = {"columns": res.header, "rows": res.rows}
        write_json(directory / f"report_{name}.json", report)
        if formats in ("csv", "both") and res.header:
            write_csv(directory / f"series_{name}.csv", res.header, res.rows)
    verdicts = {name: r.verdict for name, r in results.items()}
    status = 0 if all(v == "pass" for v in verdicts.values()) else 1
    write_json(directory / "summary.json", {
        "version": __version__,
        "config": config,
        "checks": verdicts,
        "status": status,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    })
    return RunOutcome(status, verdicts, results, directory)


def write_profiles(cfg: ExperimentConfig, out: Path, formats: str) -> list[Path]:
    """Closed-form profiles on the grid centers at the configured output times."""
    if cfg.profiles is None:
        raise ConfigError("missing section", "profiles")
    if cfg.grid is None:
        raise ConfigError("missing section", "grid")
    p, spec = cfg.params, cfg.profiles
    grid = build_grid(p, cfg.grid["r_min"], cfg.grid["r_max"], cfg.grid["cells_per_decade"])
    r = grid.centers
    times = output_times(cfg.time) if cfg.time is not None else np.array([0.0])
    columns: dict[str, list[np.ndarray]] = {}
    kind = spec["kind"]
    if kind == "barenblatt":
        M = _mass(p, spec["mass"])
        columns["barenblatt"] = [barenblatt_at(p, M, t + spec["shift"], r) for t in times]
    elif kind == "stationary":
        columns["stationary"] = [stationary_profile(p, _mass(p, spec["mass"]), r)]
        times = np.array([0.0])
        tail = -p.sigma / (1.0 - p.m)
    elif kind == "w0":
        columns["w0"] = [w0_profile(p, r)]
        times = np.array([0.0])
        tail = -2.0 * p.m / (1.0 - p.m)
    else:
        sub, sup = _bracket_specs(p, spec)
        columns["subsolution"] = [subsolution(sub, t, r) for t in times]
        columns["supersolution"] = [supersolution(sup, t, r) for t in times]
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if kind in ("stationary", "w0"):
        # field file with the analytic tail attached, readable by ``classify``
        path = out / f"field_{kind}.csv"
        write_field_csv(with_tail(RadialField(p, r, columns[kind][0]), tail), path)
        written.append(path)
    for name, cols in columns.items():
        header = ["r"] + [f"t={_fmt(t)}" for t in times[: len(cols)]]
        rows = [(r[j], *(c[j] for c in cols)) for j in range(r.size)]
        if formats in ("csv", "both"):
            path = out / f"profile_{name}.csv"
            write_csv(path, header, rows)
            written.append(path)
        if formats in ("json", "both"):
            path = out / f"profile_{name}.json"
            write_json(path, {"version": __version__, "config": cfg.resolved(), "columns": header, "rows": rows})
            written.append(path)
    return written


# -- sweeps -----------------------------------------------------------------------------


def _parse_sweep(spec: str) -> tuple[str, list]:
    key, sep, values = spec.partition("=")
    if not sep or not key or not values:
        raise ConfigError(f"expected KEY=v1,v2,..., got {spec!r}", "--sweep")
    parsed = []
    for text in values.split(","):
        try:
            parsed.append(tomllib.loads(f"v = {text}")["v"])
        except tomllib.TOMLDecodeError:
            parsed.append(text)
    return key, parsed


def _set_dotted(raw: dict, key: str, value) -> None:
    parts = key.split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError("not a table", key)
    node[parts[-1]] = value


def sweep_variants(raw: dict, sweeps: list[str]) -> list[tuple[str, dict]]:
    if not sweeps:
        return [("", raw)]
    axes = [_parse_sweep(s) for s in sweeps]
    variants = []
    for combo in itertools.product(*[[(k, v) for v in vals] for k, vals in axes]):
        variant = copy.deepcopy(raw)
        for k, v in combo:
            _set_dotted(variant, k, v)
        label = "_".join(f"{k}={v}" for k, v in combo)
        variants.append((label, variant))
    return variants


# -- command line ----------------------------------------------------------------------


def _run_variant(job: tuple[dict, str, str, list[str] | None]) -> tuple[int, dict, str]:
    raw, out, formats, only = job
    try:
        if only is not None:
            raw = copy.deepcopy(raw)
            raw.setdefault("checks", {})["names"] = only
        outcome = run(parse_config(raw), out, formats)
        results = {k: (v.verdict, v.header, v.rows, v.result) for k, v in outcome.results.items()}
        return outcome.status, results, ""
    except WfdeError as exc:
        return 2, {}, f"{type(exc).__name__}: {exc}"


def _print_table(header: list[str], rows) -> None:
    print("  ".join(f"{h:>24s}" for h in header))
    for row in rows:
        print("  ".join(f"{_fmt(v):>24s}" for v in row))


def _command_run(args, only: list[str] | None) -> int:
    try:
        cfg = load_config(args.config)
    except WfdeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.output["directory"])
    formats = args.format or cfg.output["formats"]
    try:
        variants = sweep_variants(cfg.raw, args.sweep or [])
    except ConfigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    jobs = [(raw, str(out / label if label else out), formats, only) for label, raw in variants]
    if len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
            outcomes = list(pool.map(_run_variant, jobs))
    else:
        outcomes = [_run_variant(jobs[0])]
    status = 0
    for (label, _), (code, results, message) in zip(variants, outcomes):
        prefix = f"[{label}] " if label else ""
        if code == 2:
            print(f"{prefix}error: {message}", file=sys.stderr)
        for name, (verdict, header, rows, result) in results.items():
            if only is not None and header:
                print(f"{prefix}{name}")
                _print_table(header, rows)
            if name == "rates" and "slope" in result:
                print(f"{prefix}rates: slope = {result['slope']:.6g}")
            print(f"{prefix}{name}: {verdict}")
        status = max(status, code)
    return status


def _command_classify(args) -> int:
    try:
        cfg = load_config(args.config, require_run=False)
        field = read_field_csv(args.field, cfg.params)
    except (ConfigError, IoError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: cannot read field {args.field}: {exc}", file=sys.stderr)
        return 2
    report = classify(field)
    print(json.dumps(jsonable(report.to_json()), indent=2, sort_keys=True))
    return 0


def _command_profiles(args) -> int:
    try:
        cfg = load_config(args.config, require_run=False)
        out = Path(args.out or cfg.output["directory"])
        paths = write_profiles(cfg, out, args.format or cfg.output["formats"])
    except WfdeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfde", description="Weighted fast diffusion experiments.")
    parser.add_argument("--version", action="version", version=f"wfde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, sweep: bool = True) -> None:
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--format", choices=FORMATS, help="series and profile formats")
        if sweep:
            p.add_argument("--sweep", action="append", metavar="KEY=v1,v2",
                           help="run one variant per value of a dotted config key; repeatable")

    common(sub.add_parser("simulate", help="run the configured checks"))
    ghp = sub.add_parser("ghp", help="sandwich check with a per-snapshot margin table")
    common(ghp)
    ghp.add_argument("--mode", choices=("empirical", "analytic"), default="empirical")
    common(sub.add_parser("rates", help="relative-error series and its log-log slope"))
    common(sub.add_parser("entropy", help="relative entropy and Fisher information series"))
    cls = sub.add_parser("classify", help="tail report for a field CSV")
    cls.add_argument("field", help="CSV with columns r,value")
    common(cls, sweep=False)
    common(sub.add_parser("profiles", help="closed-form profiles to CSV/JSON"), sweep=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return _command_run(args, None)
    if args.command == "ghp":
        return _command_run(args, [f"sandwich-{args.mode}"])
    if args.command == "rates":
        return _command_run(args, ["rates"])
    if args.command == "entropy":
        return _command_run(args, ["entropy"])
    if args.command == "classify":
        return _command_classify(args)
    return _command_profiles(args)


if __name__ == "__main__":
    sys.exit(main())
