"""
CSV artifacts and plot-ready aggregates.

Writers take engine objects; the report side reads the files back so that
`cloud-sync report` is a plain file-to-file transform. Floats are written
with repr() so a rerun produces byte-identical files.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict
from rich.table import Table

from .engine import settle_time
from .errors import ScenarioError
from .models import DesignCertificate, RunSummary, Trajectory
from .scenario import load_summary

logger = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectory.csv"
EVENTS_FILE = "events.csv"
SIGMA_FILE = "sigma_traces.csv"
SUMMARY_FILE = "summary.yaml"
CERTIFICATE_FILE = "certificate.yaml"
DESIGN_REPORT_FILE = "design_report.txt"

EVENT_COLUMNS = ["time_s", "agent", "access_count", "next_access_time_s"]
RASTER_WINDOW = (5.0, 8.0)


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            rows = list(reader)
    except OSError as e:
        raise ScenarioError(f"Cannot read {path}: {e}") from e
    except StopIteration:
        raise ScenarioError(f"{path} is empty") from None
    return header, rows


# =============================================================================
# RUN ARTIFACTS
# =============================================================================


def trajectory_header(n_agents: int, n: int) -> list[str]:
    states = [f"x_{i}_{k}" for i in range(1, n_agents + 1) for k in range(1, n + 1)]
    errors = [f"u_err_{i}" for i in range(1, n_agents + 1)]
    return ["t_s", *states, "delta_norm", "eta", "s", *errors]


def write_trajectory_csv(trajectory: Trajectory, path: str | Path) -> Path:
    _, n_agents, n = trajectory.states.shape
    flat = trajectory.states.reshape(len(trajectory.times), -1)
    rows = (
        [
            _fmt(t),
            *(_fmt(v) for v in flat[k]),
            _fmt(trajectory.delta_norm[k]),
            _fmt(trajectory.eta[k]),
            _fmt(trajectory.s[k]),
            *(_fmt(v) for v in trajectory.input_error[k]),
        ]
        for k, t in enumerate(trajectory.times)
    )
    return _write_rows(Path(path), trajectory_header(n_agents, n), rows)


def write_events_csv(trajectory: Trajectory, path: str | Path) -> Path:
    rows = (
        [
            _fmt(e.time),
            e.agent_id,
            e.record.access_count,
            _fmt(e.record.next_access_time),
        ]
        for e in trajectory.events
    )
    return _write_rows(Path(path), EVENT_COLUMNS, rows)


def write_sigma_traces_csv(trajectory: Trajectory, path: str | Path) -> Path:
    rows = (
        [agent, _fmt(access), _fmt(t), _fmt(sg), _fmt(sv)]
        for agent, access, t, sg, sv in trajectory.sigma_traces
    )
    return _write_rows(Path(path), ["agent", "access_time_s", "t_s", "sigma", "s"], rows)


def write_run(trajectory: Trajectory, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    written = [
        write_trajectory_csv(trajectory, out_dir / TRAJECTORY_FILE),
        write_events_csv(trajectory, out_dir / EVENTS_FILE),
    ]
    if trajectory.sigma_traces:
        written.append(write_sigma_traces_csv(trajectory, out_dir / SIGMA_FILE))
    logger.info(f"Wrote {len(trajectory.times)} samples and {len(trajectory.events)} events")
    return written


# =============================================================================
# READERS
# =============================================================================


class TrajectoryTable(BaseModel):
    """Columns of a trajectory CSV."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    header: list[str]
    data: np.ndarray

    def column(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.header.index(name)]
        except ValueError:
            raise ScenarioError(f"trajectory has no column {name!r}") from None

    def state_columns(self) -> list[str]:
        return [h for h in self.header if h.startswith("x_")]


def read_trajectory_csv(path: str | Path) -> TrajectoryTable:
    path = Path(path)
    header, rows = _read_rows(path)
    if not header or header[0] != "t_s" or "delta_norm" not in header:
        raise ScenarioError(f"{path} is not a trajectory file (header {header[:3]}...)")
    try:
        data = np.array([[float(v) for v in row] for row in rows], dtype=float)
    except ValueError as e:
        raise ScenarioError(f"Malformed number in {path}: {e}") from e
    if data.size == 0:
        data = np.zeros((0, len(header)))
    if data.shape[1] != len(header):
        raise ScenarioError(f"{path}: rows have {data.shape[1]} columns, header has {len(header)}")
    return TrajectoryTable(header=header, data=data)


def read_events_csv(path: str | Path) -> list[tuple[float, int, int, float]]:
    path = Path(path)
    header, rows = _read_rows(path)
    if header != EVENT_COLUMNS:
        raise ScenarioError(f"{path}: expected columns {EVENT_COLUMNS}, got {header}")
    try:
        return [(float(t), int(a), int(c), float(nx)) for t, a, c, nx in rows]
    except ValueError as e:
        raise ScenarioError(f"Malformed event row in {path}: {e}") from e


# =============================================================================
# AGGREGATES
# =============================================================================


def access_raster(
    events: Sequence[tuple[float, int, int, float]],
    window: tuple[float, float] = RASTER_WINDOW,
) -> list[tuple[float, int]]:
    """(time, agent) pairs with time inside the closed window."""
    start, end = window
    return [(t, agent) for t, agent, _, _ in events if start <= t <= end]


def build_report(run_dir: str | Path, out_dir: str | Path, window: tuple[float, float]) -> dict:
    """Write the states, error-vs-epsilon, raster and access-stats tables."""
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    table = read_trajectory_csv(run_dir / TRAJECTORY_FILE)
    events = read_events_csv(run_dir / EVENTS_FILE)
    summary = load_summary(run_dir / SUMMARY_FILE)

    times = table.column("t_s")
    delta = table.column("delta_norm")
    states = table.state_columns()
    _write_rows(
        out_dir / "states.csv",
        ["t_s", *states],
        (
            [_fmt(t), *(_fmt(v) for v in table.data[k, 1 : 1 + len(states)])]
            for k, t in enumerate(times)
        ),
    )
    _write_rows(
        out_dir / "error_vs_epsilon.csv",
        ["t_s", "delta_norm", "epsilon"],
        ([_fmt(t), _fmt(d), _fmt(summary.epsilon)] for t, d in zip(times, delta, strict=True)),
    )
    raster = access_raster(events, window)
    _write_rows(
        out_dir / "access_raster.csv", ["time_s", "agent"], ([_fmt(t), a] for t, a in raster)
    )
    _write_rows(
        out_dir / "access_stats.csv",
        ["agent", "access_count", "min_interval_s", "avg_interval_s", "tau_star_s"],
        (
            [
                s.agent_id,
                s.access_count,
                "" if s.min_interval is None else _fmt(s.min_interval),
                "" if s.avg_interval is None else _fmt(s.avg_interval),
                _fmt(s.tau_star),
            ]
            for s in summary.agents
        ),
    )

    crossing = settle_time(times, delta, summary.epsilon)
    aggregates = {
        "samples": int(times.size),
        "events": len(events),
        "raster_window": list(window),
        "raster_events": len(raster),
        "epsilon": summary.epsilon,
        "crossing_time": crossing,
        "settle_time": summary.settle_time,
        "final_error": float(delta[-1]) if delta.size else None,
    }
    logger.info(f"Report written to {out_dir}")
    return aggregates


# =============================================================================
# HUMAN-READABLE OUTPUT
# =============================================================================


def _matrix(m: np.ndarray) -> str:
    return np.array2string(np.asarray(m), precision=6, suppress_small=True)


def _time(value: float | None) -> str:
    if value is None:
        return "-"
    if math.isinf(value):
        return "inf"
    return f"{value:.4g}"


def format_design_report(cert: DesignCertificate) -> str:
    lines = [
        f"scenario hash   {cert.scenario_hash}",
        f"agents          {cert.n_agents}",
        f"eigenvalues     {np.round(cert.eigenvalues, 6).tolist()}",
        f"phi             {np.round(cert.phi, 6).tolist()}",
        f"riccati weight  {cert.gain.rho:.6g}",
        f"P               {_matrix(cert.gain.p)}",
        f"F               {_matrix(cert.gain.f)}",
        f"kappa_theta     {cert.plant_bound.kappa:.6g}  ({cert.plant_bound.source.value})",
        f"theta           {cert.plant_bound.rate:.6g}",
        f"kappa           {cert.contraction.kappa:.6g}  ({cert.contraction.source.value})",
        f"lambda          {cert.decay:.6g}",
        f"||B'||          {cert.b_prime_norm:.6g}",
        f"eta0            {cert.eta0:.6g}",
        f"eta_bar         {cert.eta_bar:.6g}",
        f"epsilon         {cert.epsilon:.6g}",
        "",
        "agent  beta        gamma        tau*",
    ]
    for i in range(cert.n_agents):
        lines.append(
            f"{i + 1:<6} {cert.beta[i]:<11.6g} {cert.gamma[i]:<12.6g} {_time(cert.tau_star[i])}"
        )
    if cert.notes:
        lines += ["", "notes:", *(f"- {note}" for note in cert.notes)]
    return "\n".join(lines) + "\n"


def access_table(summary: RunSummary) -> Table:
    table = Table(title="Cloud access")
    table.add_column("Agent", style="cyan", justify="right")
    table.add_column("Accesses", justify="right")
    table.add_column("Min interval [s]", justify="right")
    table.add_column("Avg interval [s]", justify="right")
    table.add_column("tau* [s]", justify="right", style="dim")
    for stats in summary.agents:
        table.add_row(
            str(stats.agent_id),
            str(stats.access_count),
            _time(stats.min_interval),
            _time(stats.avg_interval),
            _time(stats.tau_star),
        )
    return table
