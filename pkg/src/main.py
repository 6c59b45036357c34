"""
CLI Entry Point for cloud-sync.

Provides commands for:
- Designing a certificate from a scenario
- Simulating the closed loop against a certificate
- Turning run outputs into plot-ready tables
- Sweeping random scenarios through the runtime monitors
"""

import logging
from pathlib import Path

import typer
import yaml
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table

from .engine import simulate as run_simulation
from .errors import EXIT_MONITOR, CloudSyncError, SynthesisError, exit_code_for
from .models import DesignCertificate, RunSummary
from .reporting import (
    CERTIFICATE_FILE,
    DESIGN_REPORT_FILE,
    RASTER_WINDOW,
    SUMMARY_FILE,
    access_table,
    build_report,
    format_design_report,
    write_run,
)
from .scenario import (
    Scenario,
    design_certificate,
    dump_scenario,
    get_out_dir,
    load_certificate,
    load_scenario,
    random_scenario,
    resolve_scenario,
    save_certificate,
    save_summary,
    scenario_hash,
    sim_config,
)

# Setup rich console
console = Console()

# Setup logging
logging.basicConfig(
    level=logging.INFO,
    format="%(message)s",
    handlers=[RichHandler(console=console, rich_tracebacks=True)],
)
logger = logging.getLogger(__name__)

# Create Typer app
app = typer.Typer(
    name="cloud-sync",
    help="Self-triggered synchronization through a shared cloud repository",
    add_completion=False,
)

DEFAULT_SCENARIO = "oscillator-4"


@app.callback()
def configure(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log per-access details"),
):
    """Design, simulate and report cloud-mediated synchronization runs."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


def _fail(error: Exception) -> typer.Exit:
    console.print(f"[red]Error: {escape(str(error))}[/]")
    return typer.Exit(exit_code_for(error))


def _out_dir(scenario: Scenario, out_dir: Path | None) -> Path:
    if out_dir is not None:
        return out_dir
    if scenario.output_dir:
        return Path(scenario.output_dir)
    return get_out_dir() / scenario.name


def _monitor_panel(summary: RunSummary) -> Panel:
    report = summary.monitors
    if report is None:
        return Panel("[yellow]monitors were not evaluated[/]", title="Monitors")
    status = "[green]passed[/]" if report.passed else "[red]FAILED[/]"
    lines = [
        f"status                {status}",
        f"||delta|| - eta       {report.lemma1_margin:.3e}",
        f"||u_err|| - s         {report.lemma2_margin:.3e}",
        f"tau* respected        {report.zeno_ok}",
        f"repository consistent {report.repository_ok}",
        f"prediction error      {report.prediction_error:.3e}",
    ]
    lines += [f"[red]- {escape(v)}[/]" for v in report.violations[:10]]
    return Panel("\n".join(lines), title="Monitors")


# =============================================================================
# COMMANDS
# =============================================================================


@app.command()
def design(
    scenario: str = typer.Option(
        DEFAULT_SCENARIO, "--scenario", "-s", help="Scenario file or bundled scenario name"
    ),
    out_dir: Path | None = typer.Option(None, "--out-dir", "-o", help="Output directory"),
):
    """Run the offline design and write a certificate plus a readable report."""
    console.print("[bold blue]cloud-sync - Parameter Design[/]")
    console.print()

    try:
        path = resolve_scenario(scenario)
        loaded = load_scenario(path)
        console.print(f"Scenario: {loaded.name} ({path})")
        with console.status("Designing..."):
            certificate = design_certificate(loaded)
    except CloudSyncError as e:
        raise _fail(e) from e

    target = _out_dir(loaded, out_dir)
    report = format_design_report(certificate)
    try:
        save_certificate(certificate, target / CERTIFICATE_FILE)
        (target / DESIGN_REPORT_FILE).write_text(report, encoding="utf-8")
    except OSError as e:
        raise _fail(e) from e

    console.print(Panel(escape(report.rstrip()), title="Design certificate"))
    console.print(f"[green]Certificate written to {target / CERTIFICATE_FILE}[/]")


@app.command()
def simulate(
    scenario: str = typer.Option(
        DEFAULT_SCENARIO, "--scenario", "-s", help="Scenario file or bundled scenario name"
    ),
    certificate: Path | None = typer.Option(
        None, "--certificate", "-c", help="Certificate file (default: <out-dir>/certificate.yaml)"
    ),
    out_dir: Path | None = typer.Option(None, "--out-dir", "-o", help="Output directory"),
    horizon: float | None = typer.Option(
        None, "--horizon-override", help="Simulated horizon in seconds"
    ),
    grid_step: float | None = typer.Option(None, "--grid-step", help="Output grid step in seconds"),
    strict: bool | None = typer.Option(
        None,
        "--strict-monitors/--record-monitors",
        help="Abort on the first monitor violation instead of recording it",
    ),
):
    """Simulate the closed loop and write trajectory, events and summary files."""
    console.print("[bold blue]cloud-sync - Simulation[/]")
    console.print()

    try:
        loaded = load_scenario(resolve_scenario(scenario))
        target = _out_dir(loaded, out_dir)
        cert_path = certificate or target / CERTIFICATE_FILE
        if not cert_path.exists():
            console.print(f"[red]Error: certificate not found: {cert_path}[/]")
            console.print("[dim]Run 'cloud-sync design' first.[/]")
            raise typer.Exit(4)
        cert = load_certificate(cert_path, expected_hash=scenario_hash(loaded))
        config = sim_config(
            loaded, cert, horizon=horizon, output_step=grid_step, strict_monitors=strict
        )
        with console.status(f"Simulating {config.horizon:g} s..."):
            trajectory, summary = run_simulation(config)
    except CloudSyncError as e:
        raise _fail(e) from e
    except ValueError as e:
        # SimConfig validation on overridden values
        console.print(f"[red]Error: {escape(str(e))}[/]")
        raise typer.Exit(4) from e

    try:
        write_run(trajectory, target)
        save_summary(summary, target / SUMMARY_FILE)
    except OSError as e:
        raise _fail(e) from e

    console.print(access_table(summary))
    settle = "not reached" if summary.settle_time is None else f"{summary.settle_time:.3f} s"
    console.print(
        f"final ||delta|| = {summary.final_error:.4g} (epsilon = {summary.epsilon:.4g}), "
        f"settled at {settle}"
    )
    console.print(_monitor_panel(summary))
    for note in summary.notes:
        console.print(f"[dim]{escape(note)}[/]")
    console.print(f"Outputs in {target}")

    if summary.monitors is not None and not summary.monitors.passed:
        raise typer.Exit(EXIT_MONITOR)


@app.command()
def report(
    run_dir: Path = typer.Option(..., "--run-dir", "-r", help="Directory written by 'simulate'"),
    out_dir: Path | None = typer.Option(
        None, "--out-dir", "-o", help="Report directory (default: <run-dir>/report)"
    ),
    window_start: float = typer.Option(RASTER_WINDOW[0], help="Access raster start [s]"),
    window_end: float = typer.Option(RASTER_WINDOW[1], help="Access raster end [s]"),
):
    """Write plot-ready tables: states, error vs epsilon, access raster and statistics."""
    target = out_dir or run_dir / "report"
    if window_end < window_start:
        console.print("[red]Error: --window-end must not precede --window-start[/]")
        raise typer.Exit(4)

    try:
        aggregates = build_report(run_dir, target, (window_start, window_end))
        with open(target / "report.yaml", "w", encoding="utf-8") as f:
            yaml.safe_dump(aggregates, f, sort_keys=False)
    except (CloudSyncError, OSError) as e:
        raise _fail(e) from e

    table = Table(title="Report")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", justify="right")
    for key, value in aggregates.items():
        table.add_row(key, str(value))
    console.print(table)
    console.print(f"[green]Report written to {target}[/]")


@app.command()
def sweep(
    seeds: int = typer.Option(20, "--seeds", "-n", help="Number of random scenarios"),
    first_seed: int = typer.Option(0, "--first-seed", help="Seed of the first scenario"),
    out_dir: Path | None = typer.Option(
        None, "--out-dir", "-o", help="Keep failing scenarios here"
    ),
):
    """Design and simulate random scenarios with monitors in record mode."""
    console.print(f"[bold blue]cloud-sync - Sweep over {seeds} random scenarios[/]")
    console.print()

    table = Table(title="Monitor margins")
    table.add_column("Seed", style="cyan", justify="right")
    table.add_column("N x n", justify="center")
    table.add_column("delta - eta", justify="right")
    table.add_column("u_err - s", justify="right")
    table.add_column("Accesses", justify="right")
    table.add_column("Status")

    failures = 0
    for seed in range(first_seed, first_seed + seeds):
        scenario = random_scenario(seed)
        shape = f"{scenario.graph.n_agents} x {len(scenario.plant.a)}"
        try:
            cert: DesignCertificate = design_certificate(scenario)
            _, summary = run_simulation(sim_config(scenario, cert, strict_monitors=False))
        except SynthesisError as e:
            table.add_row(str(seed), shape, "-", "-", "-", f"[yellow]design: {e.step}[/]")
            continue
        except CloudSyncError as e:
            failures += 1
            table.add_row(str(seed), shape, "-", "-", "-", f"[red]{type(e).__name__}[/]")
            if out_dir is not None:
                dump_scenario(scenario, out_dir / f"{scenario.name}.yaml")
            continue

        report = summary.monitors
        passed = report is not None and report.passed
        if not passed:
            failures += 1
            if out_dir is not None:
                dump_scenario(scenario, out_dir / f"{scenario.name}.yaml")
        table.add_row(
            str(seed),
            shape,
            f"{report.lemma1_margin:.2e}" if report else "-",
            f"{report.lemma2_margin:.2e}" if report else "-",
            str(summary.event_count),
            "[green]ok[/]" if passed else "[red]FAILED[/]",
        )

    console.print(table)
    if failures:
        console.print(f"[red]{failures} scenario(s) failed their monitors[/]")
        raise typer.Exit(EXIT_MONITOR)
    console.print("[green]All monitors passed[/]")


def main():
    """Entry point."""
    app()


if __name__ == "__main__":
    main()
