"""Tests for neighbor prediction, input refresh and the next-access search."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.linalg import expm

from src.controller import (
    compute_input,
    input_error,
    input_error_field,
    next_access_time,
    plan_access,
    predict_neighbor,
    sigma,
    trigger_f,
    trigger_g,
)
from src.errors import MissingRecordError, PredictionError, TriggerError
from src.graph import build_graph, laplacian
from src.models import AgentDynamics, CloudRecord, NeighborView, ThresholdParams
from src.numerics import eval_expsum, zoh_flow
from src.synthesis import design_pipeline

OSCILLATOR = AgentDynamics(a=[[0.0, -0.4], [0.4, 0.0]], b=[[1.0, 0.0], [0.0, 1.0]])
EDGES = [(1, 3), (2, 1), (3, 2), (3, 4), (4, 1)]
X0 = np.array([[1.0, 0.5], [2.0, -1.5], [-0.5, 1.0], [-0.5, 0.5]])


@pytest.fixture(scope="module")
def graph():
    return build_graph(4, EDGES)


@pytest.fixture(scope="module")
def cert(graph):
    return design_pipeline(
        OSCILLATOR,
        graph,
        ThresholdParams(s0=1.0, s_inf=0.01, lambda_s=0.3),
        eta0=15.12,
        varrho=0.6,
        plant_bound=(1.0, 0.0),
        contraction=(2.3268, -0.7736),
    )


def _record(agent: int, next_time: float, time: float = 0.0, u=(0.0, 0.0)) -> CloudRecord:
    return CloudRecord(
        agent_id=agent,
        last_access_time=time,
        last_state=X0[agent - 1],
        held_input=list(u),
        next_access_time=next_time,
        access_count=1,
    )


def _view(agent: int, neighbors: tuple[int, ...], next_time: float, now: float = 0.0):
    return NeighborView(
        agent_id=agent,
        access_time=now,
        neighbors=neighbors,
        records={j: _record(j, next_time) for j in neighbors},
    )


# =============================================================================
# PREDICTION AND INPUT
# =============================================================================


def test_predict_neighbor_holds_input_until_next_access() -> None:
    record = _record(2, 0.5, u=(0.3, -0.2))
    expected = zoh_flow(OSCILLATOR.a, OSCILLATOR.b, X0[1], [0.3, -0.2], 0.3)
    assert np.allclose(predict_neighbor(record, OSCILLATOR, 0.3), expected)


def test_predict_neighbor_is_free_response_after_next_access() -> None:
    record = _record(2, 0.5, u=(0.3, -0.2))
    junction = zoh_flow(OSCILLATOR.a, OSCILLATOR.b, X0[1], [0.3, -0.2], 0.5)
    expected = expm(OSCILLATOR.a * 0.3) @ junction
    assert np.allclose(predict_neighbor(record, OSCILLATOR, 0.8), expected)


def test_predict_neighbor_rejects_the_past() -> None:
    with pytest.raises(PredictionError):
        predict_neighbor(_record(2, 0.5, time=0.2), OSCILLATOR, 0.1)


def test_compute_input_sums_relative_states(cert) -> None:
    view = _view(1, (2, 4), 0.5)
    u = compute_input(view, X0[0], cert.gain.f, OSCILLATOR)
    expected = cert.gain.f @ ((X0[1] - X0[0]) + (X0[3] - X0[0]))
    assert np.allclose(u, expected)


def test_compute_input_needs_every_neighbor(cert) -> None:
    view = NeighborView(agent_id=1, access_time=0.0, neighbors=(2, 4), records={2: _record(2, 0.5)})
    with pytest.raises(MissingRecordError):
        compute_input(view, X0[0], cert.gain.f, OSCILLATOR)


# =============================================================================
# TRIGGERING FUNCTION
# =============================================================================


def test_trigger_f_vanishes_at_access_instant(cert) -> None:
    view = _view(1, (2, 4), 0.5)
    u = compute_input(view, X0[0], cert.gain.f, OSCILLATOR)
    assert trigger_f(view, X0[0], u, OSCILLATOR, cert.gain.f, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert trigger_f(view, X0[0], u, OSCILLATOR, cert.gain.f, 0.1) > 0.0


def test_trigger_g_starts_after_earliest_next_access(cert) -> None:
    view = NeighborView(
        agent_id=1,
        access_time=0.0,
        neighbors=(2, 4),
        records={2: _record(2, 0.2), 4: _record(4, math.inf)},
    )
    assert trigger_g(view, cert, OSCILLATOR, 0.1) == 0.0
    assert trigger_g(view, cert, OSCILLATOR, 0.2) == 0.0
    assert trigger_g(view, cert, OSCILLATOR, 0.25) > 0.0
    values = trigger_g(view, cert, OSCILLATOR, np.array([0.1, 0.25, 0.3]))
    assert values.shape == (3,)
    assert values[0] == 0.0
    assert values[2] > values[1] > 0.0


def test_trigger_g_without_scheduled_neighbors_is_zero(cert) -> None:
    view = _view(1, (2, 4), math.inf)
    assert trigger_g(view, cert, OSCILLATOR, 5.0) == 0.0


# =============================================================================
# NEXT ACCESS
# =============================================================================


def test_next_access_is_first_threshold_crossing(cert) -> None:
    view = _view(1, (2, 4), 0.2)
    u = compute_input(view, X0[0], cert.gain.f, OSCILLATOR)
    found = next_access_time(view, X0[0], u, cert, OSCILLATOR, 0.0, 1.0)
    assert 0.0 < found < 1.0

    threshold = cert.threshold.envelope()
    for t in np.linspace(0.0, found, 200):
        assert sigma(view, X0[0], u, cert, OSCILLATOR, t) < eval_expsum(threshold, t)
    excess = sigma(view, X0[0], u, cert, OSCILLATOR, found) - eval_expsum(threshold, found)
    assert abs(excess) <= 1e-4


def test_crossing_in_first_coarse_step_is_refined_past_the_access(cert) -> None:
    # one sample at t=10 and tol_t wider than the bracket
    view = _view(1, (2, 4), 20.0)
    u = compute_input(view, X0[0], cert.gain.f, OSCILLATOR)
    found = next_access_time(
        view, X0[0], u, cert, OSCILLATOR, 0.0, 10.0, tol_t=20.0, max_step=20.0
    )
    assert 0.0 < found < 10.0

    threshold = cert.threshold.envelope()
    excess = sigma(view, X0[0], u, cert, OSCILLATOR, found) - eval_expsum(threshold, found)
    assert excess < 0.0
    assert abs(excess) <= 1e-6


def test_next_access_respects_horizon(cert) -> None:
    view = _view(1, (2, 4), 0.2)
    u = compute_input(view, X0[0], cert.gain.f, OSCILLATOR)
    assert next_access_time(view, X0[0], u, cert, OSCILLATOR, 0.0, 1e-4) == math.inf
    assert next_access_time(view, X0[0], u, cert, OSCILLATOR, 0.5, 0.5) == math.inf


def test_agent_without_neighbors_never_accesses_again(cert) -> None:
    view = NeighborView(agent_id=1, access_time=0.0, neighbors=(), records={})
    assert next_access_time(view, X0[0], [0.0, 0.0], cert, OSCILLATOR, 0.0, 10.0) == math.inf


def test_trigger_error_when_threshold_already_reached(cert) -> None:
    view = _view(1, (2, 4), 0.2)
    with pytest.raises(TriggerError):
        next_access_time(view, X0[0], [100.0, 100.0], cert, OSCILLATOR, 0.0, 1.0)


def test_plan_access_combines_input_and_search(cert) -> None:
    view = _view(1, (2, 4), 0.2)
    plan = plan_access(view, X0[0], cert, OSCILLATOR, 1.0, keep_trace=True)
    u = compute_input(view, X0[0], cert.gain.f, OSCILLATOR)
    assert np.allclose(plan.input, u)
    assert plan.next_access == next_access_time(view, X0[0], u, cert, OSCILLATOR, 0.0, 1.0)
    assert plan.samples_evaluated > 0
    assert plan.sigma_trace
    assert plan.sigma_trace[-1][0] == pytest.approx(plan.next_access)


# =============================================================================
# MONITOR-ONLY
# =============================================================================


def test_input_error_field_matches_per_agent_error(graph, cert) -> None:
    rng = np.random.default_rng(5)
    states = rng.normal(size=(3, 4, 2))
    inputs = rng.normal(size=(4, 2))
    field = input_error_field(laplacian(graph), cert.gain.f, states, inputs)
    assert field.shape == (3, 4)
    for k in range(3):
        for agent in graph.agents:
            expected = input_error(
                graph.neighbors(agent), agent, inputs[agent - 1], cert.gain.f, states[k]
            )
            assert field[k, agent - 1] == pytest.approx(expected, abs=1e-12)
