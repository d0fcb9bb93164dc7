import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from wfde.cli import jsonable, load_config, main, parse_config, sweep_variants
from wfde.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_BARENBLATT = """
[params]
d = 3
gamma = 0.0
beta = 0.0
m = 0.6666666666666666

[grid]
r_min = 1e-3
r_max = 1e7
cells_per_decade = 16

[initial]
kind = "barenblatt"
mass = 1.0
shift = 1.0

[time]
t_end = 10.0
outputs = 5
t0 = 1.0
dt_rel = 0.01

[checks]
names = ["mass", "sandwich-empirical", "relative-error"]

[checks.relative-error]
threshold = 1.0
"""

SMALL_W0 = """
[params]
d = 3
gamma = 0.0
beta = 0.0
m = 0.6666666666666666

[grid]
r_min = 1e-3
r_max = 1e7
cells_per_decade = 16

[initial]
kind = "w0"

[time]
t_end = 1.0
outputs = 4
t0 = 0.1
t_ref = 1e-3

[checks]
names = ["sandwich-empirical", "bracket"]

[checks.bracket]
A = 0.9
B = 1.0
epsilon = 2.0
t0 = 1.0
E = 1.1
F = 1.0
H = 2.2
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_simulate_passes_on_barenblatt(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_BARENBLATT)
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    for name in ("mass", "sandwich-empirical", "relative-error"):
        assert f"{name}: pass" in text
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == 0 and summary["checks"]["mass"] == "pass"
    assert (out / "trajectory" / "manifest.json").exists()
    assert (out / "series_relative-error.csv").read_text().startswith("t,")
    report = json.loads((out / "report_sandwich-empirical.json").read_text())
    assert report["verdict"] == "pass" and report["config"]["params"]["d"] == 3


def test_ghp_reports_failure_table_for_fat_tail(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_W0)
    assert main(["ghp", "--config", str(cfg), "--out", str(tmp_path / "w0")]) == 1
    text = capsys.readouterr().out
    assert "sandwich-empirical: fail" in text
    assert "upper_margin" in text.splitlines()[1]


def test_bracket_check_passes_for_fat_tail(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_W0)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "w0"), "--format", "json"]) == 1
    text = capsys.readouterr().out
    assert "bracket: pass" in text
    assert not list((tmp_path / "w0").glob("*.csv"))


def test_reruns_are_identical_apart_from_the_timestamp(tmp_path):
    cfg = write(tmp_path, SMALL_BARENBLATT)
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        a, b = (tmp_path / "a" / rel).read_text(), (tmp_path / "b" / rel).read_text()
        if rel.name == "summary.json":
            a, b = (json.loads(x) for x in (a, b))
            a.pop("timestamp"), b.pop("timestamp")
        assert a == b, rel


@pytest.mark.parametrize(
    "edit, key",
    [
        (("names = [\"mass\", \"sandwich-empirical\", \"relative-error\"]", "names = [\"mass\", \"teleport\"]"), "checks.names[1]"),
        (("m = 0.6666666666666666", "m = 0.6666666666666666\nfoo = 1"), "params.foo"),
        (("cells_per_decade = 16", "cells_per_decade = \"many\""), "grid.cells_per_decade"),
        (("kind = \"barenblatt\"", "kind = \"gaussian\""), "initial.kind"),
        (("m = 0.6666666666666666", "m = 0.2"), "params"),
    ],
)
def test_config_errors_exit_2_and_name_the_key(tmp_path, capsys, edit, key):
    cfg = write(tmp_path, SMALL_BARENBLATT.replace(*edit))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert key in capsys.readouterr().err
    with pytest.raises(ConfigError) as info:
        load_config(cfg)
    assert info.value.key == key


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.toml")]) == 2
    assert "IoError" in capsys.readouterr().err


def test_profiles_then_classify(tmp_path, capsys):
    out = tmp_path / "prof"
    stationary = CONFIGS / "stationary.toml"
    assert main(["profiles", "--config", str(stationary), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["classify", str(out / "field_stationary.csv"), "--config", str(stationary)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["class"] == "X" and report["norm_x"] > 0
    w0 = tmp_path / "w0.toml"
    w0.write_text(stationary.read_text().replace('kind = "stationary"\nmass = "reference"', 'kind = "w0"'))
    assert main(["profiles", "--config", str(w0), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["classify", str(out / "field_w0.csv"), "--config", str(w0)]) == 0
    assert json.loads(capsys.readouterr().out)["class"] == "Xc"


def test_bracket_profiles_are_ordered(tmp_path):
    out = tmp_path / "bracket"
    assert main(["profiles", "--config", str(CONFIGS / "profiles.toml"), "--out", str(out)]) == 0

    def table(name):
        lines = (out / f"profile_{name}.csv").read_text().splitlines()
        return lines[0].split(","), [[float(x) for x in line.split(",")] for line in lines[1:]]

    head_sub, sub = table("subsolution")
    head_sup, sup = table("supersolution")
    assert head_sub == head_sup and head_sub[0] == "r" and head_sub[1:] == ["t=0.0", "t=0.1", "t=1.0", "t=10.0"]
    assert len(sub) == 128
    for a, b in zip(sub, sup):
        assert a[0] == b[0]
        assert all(x <= y for x, y in zip(a[1:], b[1:]))


def test_classify_rejects_unreadable_field(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,field\n")
    assert main(["classify", str(bad), "--config", str(CONFIGS / "stationary.toml")]) == 2


def test_sweep_labels_and_values():
    raw = {"grid": {"cells_per_decade": 16}, "time": {"dt_rel": 0.01}}
    variants = sweep_variants(raw, ["grid.cells_per_decade=16,32", "time.dt_rel=0.1,0.01"])
    labels = [label for label, _ in variants]
    assert labels[0] == "grid.cells_per_decade=16_time.dt_rel=0.1"
    assert len(variants) == 4
    assert variants[1][1]["time"]["dt_rel"] == 0.01 and raw["time"]["dt_rel"] == 0.01
    assert sweep_variants(raw, []) == [("", raw)]
    with pytest.raises(ConfigError):
        sweep_variants(raw, ["grid.cells_per_decade"])


def test_sweep_runs_every_variant(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_BARENBLATT)
    code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sw"), "--sweep", "time.dt_rel=0.02,0.01"])
    assert code == 0
    text = capsys.readouterr().out
    assert "[time.dt_rel=0.02] mass: pass" in text and "[time.dt_rel=0.01] mass: pass" in text
    assert (tmp_path / "sw" / "time.dt_rel=0.02" / "summary.json").exists()


def test_shipped_configs_parse():
    for path in CONFIGS.glob("*.toml"):
        raw_has_run = "[initial]" in path.read_text()
        cfg = load_config(path, require_run=raw_has_run)
        assert cfg.params.d == 3


def test_jsonable_handles_non_finite_values():
    assert jsonable({"a": float("inf"), "b": [float("nan")], "c": (1, 2.5)}) == {"a": "inf", "b": ["nan"], "c": [1, 2.5]}


def test_parse_config_needs_sections():
    with pytest.raises(ConfigError) as info:
        parse_config({
            "params": {"d": 3, "gamma": 0.0, "beta": 0.0, "m": 0.7},
            "grid": {"r_min": 1e-3, "r_max": 1e3, "cells_per_decade": 16},
        })
    assert info.value.key == "initial"


@pytest.mark.skipif(shutil.which("wfde") is None, reason="console script not installed")
def test_console_script_entry_point():
    done = subprocess.run(["wfde", "--version"], capture_output=True, text=True, check=True)
    assert done.stdout.startswith("wfde ")


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "wfde.cli", "--help"], capture_output=True, text=True, check=True)
    assert "classify" in done.stdout
