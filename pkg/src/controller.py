"""
Per-agent self-triggered controller.

At an access instant an agent predicts its neighbors from the fetched records,
refreshes its held input, and solves for the first time its computable bound
sigma_i = f_i + g_i on the input error reaches the threshold s(t).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import MissingRecordError, PredictionError, TriggerError
from .models import AgentDynamics, CloudRecord, ControlPlan, DesignCertificate, NeighborView
from .numerics import FlowTable, eval_expsum, exp_envelope_integral, matexp, zoh_flow

logger = logging.getLogger(__name__)

SAMPLE_CHUNK = 2048
TRACE_POINTS_PER_CHUNK = 16


# =============================================================================
# PREDICTION AND INPUT
# =============================================================================


def predict_neighbor(record: CloudRecord, dyn: AgentDynamics, t: float) -> np.ndarray:
    """ZOH flow up to the record's next access, free response after it."""
    if t < record.last_access_time:
        raise PredictionError(
            f"cannot predict agent {record.agent_id} at t={t} before its access "
            f"at {record.last_access_time}"
        )
    junction = min(t, record.next_access_time)
    state = zoh_flow(
        dyn.a, dyn.b, record.last_state, record.held_input, junction - record.last_access_time
    )
    if t > record.next_access_time:
        state = matexp(dyn.a, t - record.next_access_time) @ state
    return state


def _require_records(view: NeighborView) -> None:
    missing = [j for j in view.neighbors if j not in view.records]
    if missing:
        raise MissingRecordError(f"agent {view.agent_id} has no record for neighbors {missing}")


def compute_input(
    view: NeighborView, own_state: ArrayLike, f: ArrayLike, dyn: AgentDynamics
) -> np.ndarray:
    """u_i = F sum_j (x_j - x_i) at the access instant."""
    _require_records(view)
    own_state = np.asarray(own_state, dtype=float)
    relative = np.zeros(dyn.n)
    for j in view.neighbors:
        relative += predict_neighbor(view.records[j], dyn, view.access_time) - own_state
    return np.asarray(f, dtype=float) @ relative


# =============================================================================
# TRIGGERING FUNCTION
# =============================================================================


def trigger_f(
    view: NeighborView,
    own_state: ArrayLike,
    held_input: ArrayLike,
    dyn: AgentDynamics,
    f: ArrayLike,
    t: float,
) -> float:
    """||F sum_j (xhat_j(t) - x_i(t)) - u_i||, the drift caused by holding u_i."""
    _require_records(view)
    u = np.asarray(held_input, dtype=float)
    own = zoh_flow(dyn.a, dyn.b, own_state, u, t - view.access_time)
    relative = np.zeros(dyn.n)
    for j in view.neighbors:
        relative += predict_neighbor(view.records[j], dyn, t) - own
    return float(np.linalg.norm(np.asarray(f, dtype=float) @ relative - u))


def g_scale(dyn: AgentDynamics, cert: DesignCertificate) -> float:
    """||B|| ||F|| kappa_theta."""
    return float(
        np.linalg.norm(dyn.b, 2) * np.linalg.norm(cert.gain.f, 2) * cert.plant_bound.kappa
    )


def trigger_g(
    view: NeighborView, cert: DesignCertificate, dyn: AgentDynamics, t: float | ArrayLike
) -> float | np.ndarray:
    """
    Bound on the effect of neighbors' inputs that are unknown after their
    planned next access; zero until the earliest fetched next access passes.
    """
    _require_records(view)
    t_arr = np.asarray(t, dtype=float)
    theta = cert.plant_bound.rate
    total = np.zeros_like(t_arr)
    for j in view.neighbors:
        start = view.records[j].next_access_time
        if math.isinf(start):
            continue
        active = t_arr > start
        if not np.any(active):
            continue
        upper = np.where(active, t_arr, start)
        total = total + np.where(
            active, exp_envelope_integral(theta, cert.mu(j), start, upper), 0.0
        )
    total = g_scale(dyn, cert) * total
    return float(total) if total.ndim == 0 else total


def sigma(
    view: NeighborView,
    own_state: ArrayLike,
    held_input: ArrayLike,
    cert: DesignCertificate,
    dyn: AgentDynamics,
    t: float,
) -> float:
    return trigger_f(view, own_state, held_input, dyn, cert.gain.f, t) + float(
        trigger_g(view, cert, dyn, t)
    )


# =============================================================================
# NEXT ACCESS
# =============================================================================


def _piece_bounds(view: NeighborView, t_now: float, horizon: float) -> list[float]:
    """Breakpoints where sigma changes analytic form."""
    inner = sorted(
        {
            record.next_access_time
            for record in view.records.values()
            if t_now < record.next_access_time < horizon
        }
    )
    return [t_now, *inner, horizon]


def _search_crossing(
    view: NeighborView,
    own_state: np.ndarray,
    held_input: np.ndarray,
    cert: DesignCertificate,
    dyn: AgentDynamics,
    t_now: float,
    horizon: float,
    step: float,
    tol_t: float,
    tol_sigma: float,
    keep_trace: bool,
) -> tuple[float, list[tuple[float, float, float]], int]:
    f = cert.gain.f
    threshold = cert.threshold.envelope()
    theta = cert.plant_bound.rate
    scale = g_scale(dyn, cert)
    neighbors = list(view.neighbors)
    trace: list[tuple[float, float, float]] = []
    evaluated = 0

    def excess(t: float) -> float:
        return sigma(view, own_state, held_input, cert, dyn, t) - eval_expsum(threshold, t)

    def bisect(low: float, high: float, width: float) -> tuple[float, float]:
        while high - low > width:
            mid = 0.5 * (low + high)
            if mid <= low or mid >= high:
                break
            if excess(mid) >= -tol_sigma:
                high = mid
            else:
                low = mid
        return low, high

    bounds = _piece_bounds(view, t_now, horizon)
    t_prev = t_now
    for p0, p1 in zip(bounds[:-1], bounds[1:], strict=True):
        count = max(1, math.ceil((p1 - p0) / step))
        piece_step = (p1 - p0) / count
        table = FlowTable(dyn.a, dyn.b, piece_step)

        records = [view.records[j] for j in neighbors]
        states = np.vstack(
            [
                zoh_flow(dyn.a, dyn.b, own_state, held_input, p0 - t_now),
                *(predict_neighbor(r, dyn, p0) for r in records),
            ]
        )
        inputs = np.vstack(
            [
                held_input,
                *(r.held_input if p0 < r.next_access_time else np.zeros(dyn.m) for r in records),
            ]
        )
        unknown = [
            (r.next_access_time, cert.mu(r.agent_id))
            for r in records
            if r.next_access_time <= p0
        ]

        done = 0
        while done < count:
            size = min(SAMPLE_CHUNK, count - done)
            block = table.propagate(states, inputs, size)[1:]
            indices = np.arange(done + 1, done + size + 1)
            times = p0 + piece_step * indices
            own = block[:, 0]
            relative = block[:, 1:].sum(axis=1) - len(neighbors) * own
            f_values = np.linalg.norm(relative @ f.T - held_input, axis=1)
            g_values = np.zeros(size)
            for start, mu in unknown:
                g_values += exp_envelope_integral(theta, mu, start, times)
            sigma_values = f_values + scale * g_values
            s_values = eval_expsum(threshold, times)
            evaluated += size

            if keep_trace:
                stride = max(1, size // TRACE_POINTS_PER_CHUNK)
                trace.extend(
                    (float(t), float(sg), float(sv))
                    for t, sg, sv in zip(
                        times[::stride], sigma_values[::stride], s_values[::stride], strict=True
                    )
                )

            hits = np.flatnonzero(sigma_values - s_values >= -tol_sigma)
            if hits.size:
                k = int(hits[0])
                low = float(times[k - 1]) if k > 0 else t_prev
                high = float(times[k])
                low, high = bisect(low, high, tol_t)
                if low <= t_now:
                    # crossing closer to the access than tol_t: refine to float spacing
                    low, high = bisect(low, high, math.ulp(high))
                if keep_trace:
                    s_low = eval_expsum(threshold, low)
                    trace.append((low, excess(low) + s_low, s_low))
                return low, trace, evaluated

            states = block[-1]
            t_prev = float(times[-1])
            done += size
    return math.inf, trace, evaluated


def next_access_time(
    view: NeighborView,
    own_state: ArrayLike,
    held_input: ArrayLike,
    cert: DesignCertificate,
    dyn: AgentDynamics,
    t_now: float,
    horizon: float,
    tol_t: float = 1e-7,
    max_step: float = 1e-3,
    tol_sigma: float = 1e-9,
) -> float:
    """
    Left-biased first time after t_now at which sigma_i reaches s(t).

    Returns math.inf when no crossing happens before `horizon`.
    """
    return plan_next_access(
        view, own_state, held_input, cert, dyn, t_now, horizon, tol_t, max_step, tol_sigma
    )[0]


def plan_next_access(
    view: NeighborView,
    own_state: ArrayLike,
    held_input: ArrayLike,
    cert: DesignCertificate,
    dyn: AgentDynamics,
    t_now: float,
    horizon: float,
    tol_t: float = 1e-7,
    max_step: float = 1e-3,
    tol_sigma: float = 1e-9,
    keep_trace: bool = False,
) -> tuple[float, list[tuple[float, float, float]], int]:
    _require_records(view)
    own_state = np.asarray(own_state, dtype=float)
    held_input = np.asarray(held_input, dtype=float)
    if not view.neighbors or horizon <= t_now:
        return math.inf, [], 0

    start_excess = sigma(view, own_state, held_input, cert, dyn, t_now) - eval_expsum(
        cert.threshold.envelope(), t_now
    )
    if start_excess >= -tol_sigma:
        raise TriggerError(
            f"agent {view.agent_id}: sigma already reaches s at the access instant t={t_now}"
        )

    tau = cert.tau(view.agent_id)
    step = max(min(tau / 4.0, max_step), tol_t)
    found, trace, evaluated = _search_crossing(
        view, own_state, held_input, cert, dyn, t_now, horizon, step, tol_t, tol_sigma, keep_trace
    )
    if found <= t_now:
        raise TriggerError(f"agent {view.agent_id}: zero-length access interval at t={t_now}")
    if found - t_now < tau:
        logger.warning(
            f"agent {view.agent_id}: interval {found - t_now:.3e}s is below tau* {tau:.3e}s"
        )
    logger.debug(
        f"agent {view.agent_id}: t={t_now:.6f} next={found:.6f} ({evaluated} samples)"
    )
    return found, trace, evaluated


def plan_access(
    view: NeighborView,
    own_state: ArrayLike,
    cert: DesignCertificate,
    dyn: AgentDynamics,
    horizon: float,
    tol_t: float = 1e-7,
    max_step: float = 1e-3,
    tol_sigma: float = 1e-9,
    keep_trace: bool = False,
) -> ControlPlan:
    """Input refresh followed by the next-access search."""
    u = compute_input(view, own_state, cert.gain.f, dyn)
    found, trace, evaluated = plan_next_access(
        view,
        own_state,
        u,
        cert,
        dyn,
        view.access_time,
        horizon,
        tol_t,
        max_step,
        tol_sigma,
        keep_trace,
    )
    return ControlPlan(input=u, next_access=found, sigma_trace=trace, samples_evaluated=evaluated)


# =============================================================================
# MONITOR-ONLY
# =============================================================================


def input_error(
    neighbors: Sequence[int], agent: int, held_input: ArrayLike, f: ArrayLike, states: ArrayLike
) -> float:
    """||u_i - F sum_j (x_j - x_i)|| from true states, indexed 1..N."""
    states = np.asarray(states, dtype=float)
    own = states[agent - 1]
    relative = sum((states[j - 1] - own for j in neighbors), np.zeros_like(own))
    return float(np.linalg.norm(np.asarray(held_input, dtype=float) - np.asarray(f) @ relative))


def input_error_field(
    lap: np.ndarray, f: np.ndarray, states: np.ndarray, inputs: np.ndarray
) -> np.ndarray:
    """
    Per-agent input error norms for stacked samples.

    `states` is (K, N, n), `inputs` is (K, N, m) or (N, m); returns (K, N).
    """
    z = -np.einsum("ij,kjn->kin", lap, states) @ f.T
    return np.linalg.norm(inputs - z, axis=-1)
