"""Closed-loop tests on the bundled oscillator scenario and random scenarios."""

from __future__ import annotations

import math

import numpy as np
import pytest

from src.engine import (
    BOOTSTRAP_NOTE,
    collective_residual,
    disagreement,
    initialize,
    monitor_zeno,
    run,
    settle_time,
    simulate,
)
from src.errors import SimulationError
from src.graph import build_graph, laplacian
from src.models import AgentDynamics, SimConfig, ThresholdParams
from src.reporting import EVENTS_FILE, SUMMARY_FILE, TRAJECTORY_FILE, write_run
from src.scenario import (
    design_certificate,
    load_scenario,
    random_scenario,
    resolve_scenario,
    save_summary,
    sim_config,
)
from src.synthesis import design_pipeline


@pytest.fixture(scope="module")
def scenario():
    return load_scenario(resolve_scenario("oscillator-4"))


@pytest.fixture(scope="module")
def certificate(scenario):
    return design_certificate(scenario)


@pytest.fixture(scope="module")
def full_run(scenario, certificate):
    return simulate(sim_config(scenario, certificate))


# =============================================================================
# HELPERS
# =============================================================================


def test_disagreement_is_orthogonal_to_phi() -> None:
    phi = np.array([0.2, 0.2, 0.4, 0.2])
    states = np.random.default_rng(1).normal(size=(5, 4, 2))
    delta = disagreement(phi, states)
    assert delta.shape == states.shape
    assert np.allclose(np.einsum("i,kin->kn", phi, delta), 0.0)
    assert np.allclose(disagreement(phi, np.ones((4, 2))), 0.0)


def test_settle_time_cases() -> None:
    times = np.array([0.0, 1.0, 2.0, 3.0])
    assert settle_time(times, np.array([0.1, 0.1, 0.1, 0.1]), 1.0) == 0.0
    assert settle_time(times, np.array([5.0, 2.0, 0.5, 0.2]), 1.0) == 2.0
    assert settle_time(times, np.array([5.0, 0.5, 0.5, 2.0]), 1.0) is None
    assert settle_time(np.array([]), np.array([]), 1.0) is None


# =============================================================================
# BUNDLED SCENARIO
# =============================================================================


def test_initialize_schedules_every_agent(scenario, certificate) -> None:
    state = initialize(sim_config(scenario, certificate, horizon=1.0))
    assert len(state.queue) == 4
    assert all(t > 0 for t, _ in state.queue)
    log = state.repository.access_log
    assert [e.agent_id for e in log] == [1, 2, 3, 4]
    assert all(e.time == 0.0 and e.record.access_count == 1 for e in log)


def test_initial_disagreement_above_eta0_is_rejected(scenario) -> None:
    cert = design_pipeline(
        scenario.dynamics(),
        scenario.accessibility_graph(),
        scenario.design.threshold,
        eta0=1.0,
        varrho=0.6,
        plant_bound=(1.0, 0.0),
        contraction=(2.3268, -0.7736),
    )
    with pytest.raises(SimulationError, match="eta0"):
        initialize(sim_config(scenario, cert))


def test_bundled_run_reaches_tolerance(full_run, certificate) -> None:
    _, summary = full_run
    assert summary.horizon == pytest.approx(8.0)
    assert summary.epsilon == pytest.approx(certificate.epsilon)
    assert summary.final_error <= certificate.epsilon
    assert 5e-4 <= summary.final_error <= 2e-2
    assert summary.settle_time is not None
    assert 3.0 <= summary.settle_time <= 6.0
    assert BOOTSTRAP_NOTE in summary.notes


def test_bundled_run_access_statistics(full_run, certificate) -> None:
    _, summary = full_run
    assert [a.agent_id for a in summary.agents] == [1, 2, 3, 4]
    for stats in summary.agents:
        assert 34 <= stats.access_count <= 104
        assert stats.min_interval is not None
        assert stats.min_interval >= certificate.tau(stats.agent_id)
        assert stats.avg_interval >= stats.min_interval
    assert summary.event_count == sum(a.access_count for a in summary.agents)
    assert not summary.zeno_flag


def test_bundled_run_passes_monitors(full_run) -> None:
    trajectory, summary = full_run
    report = summary.monitors
    assert report is not None
    assert report.passed, report.violations
    assert report.lemma1_margin <= 0.0
    assert report.lemma2_margin <= 1e-6
    assert report.repository_ok
    assert report.zeno_ok
    assert trajectory.prediction_error <= 1e-9


def test_bundled_run_sampling(full_run) -> None:
    trajectory, summary = full_run
    times = trajectory.times
    assert times[0] == 0.0
    assert np.all(np.diff(times) > 0)
    event_times = np.array([e.time for e in trajectory.events])
    assert np.all(np.isin(event_times, times))
    assert len(trajectory.pre_access_error) == summary.event_count
    assert trajectory.states.shape == (len(times), 4, 2)
    assert trajectory.input_error.shape == (len(times), 4)


def test_bundled_run_follows_collective_dynamics(full_run, scenario, certificate) -> None:
    trajectory, _ = full_run
    lap = laplacian(scenario.accessibility_graph())
    residual = collective_residual(trajectory, scenario.dynamics(), lap, certificate.gain.f)
    assert residual <= 1e-4


def test_corrupted_summary_trips_zeno_monitor(full_run, certificate) -> None:
    _, summary = full_run
    corrupted = summary.model_copy(deep=True)
    corrupted.agents[0].min_interval = certificate.tau(1) / 2
    assert monitor_zeno(summary, certificate)
    assert not monitor_zeno(corrupted, certificate)


def test_runs_are_deterministic(scenario, certificate) -> None:
    config = sim_config(scenario, certificate, horizon=1.0)
    first, _ = simulate(config)
    second, _ = simulate(config)
    assert np.array_equal(first.times, second.times)
    assert np.array_equal(first.states, second.states)
    assert [(e.time, e.agent_id) for e in first.events] == [
        (e.time, e.agent_id) for e in second.events
    ]


def test_full_runs_write_identical_files(scenario, certificate, full_run, tmp_path) -> None:
    again = simulate(sim_config(scenario, certificate))
    for name, (trajectory, summary) in (("first", full_run), ("second", again)):
        write_run(trajectory, tmp_path / name)
        save_summary(summary, tmp_path / name / SUMMARY_FILE)
    for filename in (TRAJECTORY_FILE, EVENTS_FILE, SUMMARY_FILE):
        first = (tmp_path / "first" / filename).read_bytes()
        assert first
        assert first == (tmp_path / "second" / filename).read_bytes()


def test_truncating_run_keeps_planned_horizon(scenario, certificate) -> None:
    state = initialize(sim_config(scenario, certificate, horizon=1.0))
    trajectory, summary = run(state, horizon=0.5)
    assert trajectory.times[-1] == pytest.approx(0.5)
    assert summary.horizon == pytest.approx(0.5)


def test_synchronized_start_stays_synchronized(scenario, certificate) -> None:
    config = sim_config(scenario, certificate, horizon=0.5).model_copy(
        update={"x0": np.tile([1.0, -0.5], (4, 1))}
    )
    trajectory, summary = simulate(config)
    assert np.max(trajectory.delta_norm) <= 1e-12
    assert np.max(np.abs(trajectory.inputs)) <= 1e-12
    assert summary.monitors.passed


# =============================================================================
# OTHER CONFIGURATIONS
# =============================================================================


def test_single_agent_decays_freely() -> None:
    plant = AgentDynamics(a=[[-1.0]], b=[[1.0]])
    graph = build_graph(1, [])
    cert = design_pipeline(plant, graph, ThresholdParams(s0=1.0, s_inf=0.1, lambda_s=0.5), eta0=1.0)
    config = SimConfig(dynamics=plant, graph=graph, certificate=cert, x0=[[1.0]], horizon=1.0)
    trajectory, summary = simulate(config)
    assert summary.event_count == 1
    assert summary.agents[0].min_interval is None
    assert trajectory.states[-1, 0, 0] == pytest.approx(math.exp(-1.0), rel=1e-9)
    assert np.max(trajectory.delta_norm) <= 1e-15


@pytest.mark.parametrize("seed", range(20))
def test_random_scenarios_pass_monitors(seed: int) -> None:
    scenario = random_scenario(seed)
    cert = design_certificate(scenario)
    assert cert.contraction.rate < 0
    trajectory, summary = simulate(sim_config(scenario, cert, strict_monitors=False))
    assert summary.monitors.passed, summary.monitors.violations
    assert summary.monitors.zeno_ok
    assert len(trajectory.events) >= scenario.graph.n_agents
