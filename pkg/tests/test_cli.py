import csv
import hashlib
import json

import pytest
import yaml

from algocollusion import cli
from algocollusion.simulator import DivergenceError

EXPECTED = {"fig2_sweep", "fig3_traces", "fig4_fields", "fig5_basins", "fig8_localtime", "fig9_chaos",
            "fig10_bertrand", "fig6_7_keywords", "appendixD_region", "vcg_demo"}


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_bundled_catalog_is_complete_and_valid():
    found = cli.bundled_scenarios()
    assert set(found) >= EXPECTED and len(found) >= 10
    for name, path in found.items():
        cfg = yaml.safe_load(path.read_text())
        cli.validate_config(cfg)
        assert cfg["name"] == name


def test_bertrand_scenario_declares_no_discounting():
    cfg, _ = cli.load_config("fig10_bertrand")
    assert all(a["gamma"] == 0 for a in cfg["agents"])


def test_list_prints_catalog(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    for name in EXPECTED:
        assert name in out


def test_steady_outputs_closed_forms(tmp_path):
    cfg = write(tmp_path, """
name: steady18
mode: steady
game: {family: contribution, params: {g: 1.8}}
agents: [{epsilon: 0.1, gamma: 0.9}]
""")
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    d = json.loads((tmp_path / "o" / "steady.json").read_text())
    assert d["epsilon_threshold"] == pytest.approx(2 / 3)
    assert d["q_eq_D"] == pytest.approx([20.7, 20.9])
    assert d["q_eq_C"] == pytest.approx([35.09365914038728] * 2)
    assert d["tau_at_C"] == pytest.approx(0.9926152180824505)


SWEEP = """
name: tiny_sweep
mode: sweep
seed: 1
game: {family: contribution}
agents: [{alpha: 0.05, gamma: 0.9, epsilon: 0.1}]
run: {grid: {g: [1.2, 1.8]}, seeds_per_cell: 2, iterations: 3000}
"""


def test_sweep_csv_columns_and_manifest(tmp_path):
    cfg = write(tmp_path, SWEEP)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", cfg, "--out", str(out), "--jobs", "1"]) == 0
    with open(out / "cells.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {"g", "seeds", "nash_fraction"} <= set(rows[0])
    assert [r["g"] for r in rows] == ["1.2", "1.8"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 1 and man["tool_version"]
    assert man["config_sha256"] == hashlib.sha256(open(cfg, "rb").read()).hexdigest()
    listed = {f["path"]: f["sha256"] for f in man["files"]}
    assert set(listed) == {"cells.csv", "episodes.csv"}
    for name, digest in listed.items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, SWEEP)
    for k in (1, 2):
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / f"o{k}"), "--jobs", "1",
                         "--format", "json"]) == 0
    for name in ("cells.json", "episodes.json", "manifest.json"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()


def test_seed_override_changes_manifest(tmp_path):
    cfg = write(tmp_path, SWEEP)
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "7", "--jobs", "1"]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["seed"] == 7
    with open(tmp_path / "o" / "episodes.csv") as fh:
        assert {r["seed"] for r in csv.DictReader(fh)} == {"7", "8"}


def test_missing_game_is_a_config_error_without_output(tmp_path, capsys):
    cfg = write(tmp_path, "name: bad\nmode: sweep\nrun: {grid: {g: [1.5]}, seeds_per_cell: 1, iterations: 10}\n")
    out = tmp_path / "o"
    assert cli.main(["run", "--config", cfg, "--out", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()
    assert "game" in capsys.readouterr().err


@pytest.mark.parametrize("text", [
    "name: [unclosed\n",
    "name: x\nmode: teleport\n",
    "name: x\nmode: steady\ngame: {family: contribution, params: {g: 3.0}}\n",
    "name: x\nmode: sweep\ngame: {family: contribution}\nagents: [{alpha: 2.0}]\n"
    "run: {grid: {g: [1.5]}, seeds_per_cell: 1, iterations: 10}\n",
    "name: x\nmode: mechanisms\nrun: {kind: vcg, bids: [1.0, 2.0]}\n",
])
def test_config_errors_exit_2(tmp_path, text):
    out = tmp_path / "o"
    assert cli.main(["run", "--config", write(tmp_path, text), "--out", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_missing_file_is_io_error(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == cli.EXIT_IO


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    def boom(cfg, fmt, jobs):
        raise DivergenceError(12, [])

    monkeypatch.setitem(cli.RUNNERS, "steady", boom)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", "fig10_bertrand", "--out", str(out)]) == cli.EXIT_NUMERIC
    assert not out.exists()


def test_vcg_and_region_scenarios(tmp_path):
    assert cli.main(["run", "--config", "vcg_demo", "--out", str(tmp_path / "v")]) == 0
    d = json.loads((tmp_path / "v" / "vcg.json").read_text())
    assert d["payments"] == [320.0, 240.0, 0.0, 0.0]
    with open(tmp_path / "v" / "counterfactuals.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 * 101
    assert cli.main(["run", "--config", "appendixD_region", "--out", str(tmp_path / "r")]) == 0
    with open(tmp_path / "r" / "region.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["inside"] for r in rows} == {"True", "False"}
    assert "inside_exact" in rows[0]


def test_bertrand_scenario_values(tmp_path):
    assert cli.main(["run", "--config", "fig10_bertrand", "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "bertrand.json").read_text())
    assert d["gamma"] == 0.0
    assert d["reports"]["sync"]["attractor"] == pytest.approx([0.625, 0.0])


def test_fluid_scenario_outputs(tmp_path):
    assert cli.main(["run", "--config", "fig4_fields", "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    names = {f["path"] for f in man["files"]}
    assert {"pieces.json", "field_grid.csv", "trajectory_0.csv", "trajectory_1.csv"} <= names
    pieces = json.loads((tmp_path / "pieces.json").read_text())["pieces"]
    assert [p["label"] for p in pieces] == [["C"], ["D"]]


def test_chaos_json_is_strict(tmp_path):
    cfg = write(tmp_path, """
name: short_chaos
mode: chaos
game: {family: contribution, params: {g: 1.8}}
agents: [{alpha: 0.05, gamma: 0.9, epsilon: 0.1}]
run: {init: [37.0, 36.5, 36.2, 37.3], horizon: 200.0}
""")
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "chaos.json").read_text()
    assert "NaN" not in text and "Infinity" not in text
    json.loads(text)
