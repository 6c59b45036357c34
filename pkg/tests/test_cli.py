"""End-to-end tests of the cloud-sync commands."""

from __future__ import annotations

import csv
from pathlib import Path

import pytest
import yaml
from typer.testing import CliRunner

from src.main import app

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
BUNDLED = DATA_DIR / "scenarios" / "oscillator-4.yaml"

runner = CliRunner()


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("oscillator")
    design = runner.invoke(app, ["design", "--scenario", str(BUNDLED), "--out-dir", str(out)])
    assert design.exit_code == 0, design.output
    simulate = runner.invoke(
        app,
        ["simulate", "--scenario", "oscillator-4", "--out-dir", str(out), "--horizon-override", "0.1"],
    )
    assert simulate.exit_code == 0, simulate.output
    return out


def test_design_writes_certificate_and_report(run_dir) -> None:
    assert (run_dir / "certificate.yaml").exists()
    report = (run_dir / "design_report.txt").read_text(encoding="utf-8")
    assert "epsilon" in report
    assert "notes:" in report


def test_simulate_writes_run_files(run_dir) -> None:
    for name in ("trajectory.csv", "events.csv", "summary.yaml"):
        assert (run_dir / name).exists()
    with open(run_dir / "events.csv", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["time_s", "agent", "access_count", "next_access_time_s"]
    assert [row[1] for row in rows[1:5]] == ["1", "2", "3", "4"]
    with open(run_dir / "summary.yaml", encoding="utf-8") as f:
        summary = yaml.safe_load(f)
    assert summary["horizon"] == pytest.approx(0.1)
    assert summary["monitors"]["violations"] == []


def test_report_writes_tables(run_dir) -> None:
    result = runner.invoke(
        app,
        ["report", "--run-dir", str(run_dir), "--window-start", "0", "--window-end", "0.1"],
    )
    assert result.exit_code == 0, result.output
    target = run_dir / "report"
    for name in ("states.csv", "error_vs_epsilon.csv", "access_raster.csv", "access_stats.csv"):
        assert (target / name).exists()
    with open(target / "report.yaml", encoding="utf-8") as f:
        aggregates = yaml.safe_load(f)
    assert aggregates["raster_events"] == aggregates["events"]
    with open(target / "states.csv", encoding="utf-8") as f:
        header = next(csv.reader(f))
    assert header == ["t_s", "x_1_1", "x_1_2", "x_2_1", "x_2_2", "x_3_1", "x_3_2", "x_4_1", "x_4_2"]


def test_empty_raster_keeps_header(run_dir, tmp_path) -> None:
    result = runner.invoke(
        app, ["report", "--run-dir", str(run_dir), "--out-dir", str(tmp_path)]
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "access_raster.csv").read_text(encoding="utf-8") == "time_s,agent\n"


def test_report_rejects_reversed_window(run_dir, tmp_path) -> None:
    result = runner.invoke(
        app,
        ["report", "-r", str(run_dir), "-o", str(tmp_path), "--window-start", "2",
         "--window-end", "1"],
    )
    assert result.exit_code == 4


def test_disconnected_graph_fails_design(tmp_path) -> None:
    with open(BUNDLED, encoding="utf-8") as f:
        data = yaml.safe_load(f)
    data["graph"]["edges"] = [[1, 2], [3, 4]]
    path = tmp_path / "split.yaml"
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f)
    result = runner.invoke(app, ["design", "-s", str(path), "-o", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert "spanning tree" in result.output


def test_unknown_scenario_exits_with_io_code(tmp_path) -> None:
    result = runner.invoke(app, ["design", "-s", "no-such-scenario", "-o", str(tmp_path)])
    assert result.exit_code == 4


def test_missing_certificate(tmp_path) -> None:
    result = runner.invoke(app, ["simulate", "-s", str(BUNDLED), "-o", str(tmp_path)])
    assert result.exit_code == 4
    assert "certificate not found" in result.output


def test_edited_certificate_is_refused(run_dir, tmp_path) -> None:
    with open(run_dir / "certificate.yaml", encoding="utf-8") as f:
        document = yaml.safe_load(f)
    document["certificate"]["eta0"] = 100.0
    edited = tmp_path / "certificate.yaml"
    with open(edited, "w", encoding="utf-8") as f:
        yaml.safe_dump(document, f, sort_keys=False)
    result = runner.invoke(
        app,
        ["simulate", "-s", str(BUNDLED), "-c", str(edited), "-o", str(tmp_path / "run")],
    )
    assert result.exit_code == 4


@pytest.fixture
def blocked_dir(tmp_path) -> Path:
    path = tmp_path / "taken"
    path.write_text("not a directory\n", encoding="utf-8")
    return path


def test_design_unwritable_out_dir_exits_with_io_code(blocked_dir) -> None:
    result = runner.invoke(app, ["design", "-s", str(BUNDLED), "-o", str(blocked_dir)])
    assert result.exit_code == 4
    assert "Error:" in result.output
    assert result.exception is None or isinstance(result.exception, SystemExit)


def test_simulate_unwritable_out_dir_exits_with_io_code(run_dir, blocked_dir) -> None:
    result = runner.invoke(
        app,
        ["simulate", "-s", str(BUNDLED), "-c", str(run_dir / "certificate.yaml"),
         "-o", str(blocked_dir), "--horizon-override", "0.1"],
    )
    assert result.exit_code == 4
    assert "Error:" in result.output


def test_report_unwritable_out_dir_exits_with_io_code(run_dir, blocked_dir) -> None:
    result = runner.invoke(app, ["report", "-r", str(run_dir), "-o", str(blocked_dir)])
    assert result.exit_code == 4
    assert "Error:" in result.output
