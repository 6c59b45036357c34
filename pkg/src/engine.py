"""
Deterministic event-driven closed loop.

Accesses are kept in a heap keyed by (time, agent), so simultaneous accesses
run in ascending agent order. True states are propagated exactly between
events; samples are taken on the output grid and at every event instant.
"""

from __future__ import annotations

import heapq
import logging
import math

import numpy as np

from .cloud import Repository
from .controller import input_error_field, plan_access, predict_neighbor
from .errors import MonitorViolation, SimulationError
from .graph import laplacian
from .models import (
    AccessLogEntry,
    AgentAccessStats,
    AgentDynamics,
    CloudRecord,
    DesignCertificate,
    MonitorReport,
    NeighborView,
    RunSummary,
    SimConfig,
    Trajectory,
)
from .numerics import FlowTable, eval_expsum, zoh_flow

logger = logging.getLogger(__name__)

# Planned next access of a seeded record: the smallest positive time.
SEED_NEXT_ACCESS = math.nextafter(0.0, math.inf)
PREDICTION_TOL = 1e-9

BOOTSTRAP_NOTE = (
    "t=0 bootstrap: agents access in index order; a neighbor that has not posted yet "
    "is read as (t=0, x_j(0), u_j=0, next=0+)"
)


def seed_record(agent: int, state: np.ndarray, m: int) -> CloudRecord:
    return CloudRecord(
        agent_id=agent,
        last_access_time=0.0,
        last_state=state,
        held_input=np.zeros(m),
        next_access_time=SEED_NEXT_ACCESS,
        access_count=0,
    )


def disagreement(phi: np.ndarray, states: np.ndarray) -> np.ndarray:
    """delta = x - 1 (x) alpha with alpha = (phi^T (x) I) x; works on stacked samples."""
    alpha = np.einsum("i,...in->...n", phi, states)
    return states - alpha[..., np.newaxis, :]


# =============================================================================
# RECORDER
# =============================================================================


class _Recorder:
    """Accumulates samples and evaluates the lemma monitors block by block."""

    def __init__(self, config: SimConfig, lap: np.ndarray):
        self.config = config
        self.cert = config.certificate
        self.lap = lap
        self.threshold = config.certificate.threshold.envelope()
        self.times: list[np.ndarray] = []
        self.states: list[np.ndarray] = []
        self.inputs: list[np.ndarray] = []
        self.violations: list[str] = []
        self.last_time = -math.inf

    def flag(self, monitor: str, time: float, margin: float) -> None:
        message = f"{monitor} violated at t={time:.6f}s (margin {margin:.3e})"
        if self.config.strict_monitors:
            raise MonitorViolation(monitor, time, margin)
        if len(self.violations) < 50:
            self.violations.append(message)
        logger.warning(message)

    def add(self, times: np.ndarray, states: np.ndarray, inputs: np.ndarray) -> None:
        if times.size == 0:
            return
        inputs = np.broadcast_to(inputs, states.shape[:2] + (inputs.shape[-1],))
        delta_norm = np.linalg.norm(
            disagreement(self.cert.phi, states).reshape(len(times), -1), axis=1
        )
        lemma1 = delta_norm - eval_expsum(self.cert.eta, times)
        errors = input_error_field(self.lap, self.cert.gain.f, states, inputs)
        lemma2 = (errors - eval_expsum(self.threshold, times)[:, np.newaxis]).max(axis=1)
        tol = self.config.monitor_tol
        for name, margins in (("delta <= eta", lemma1), ("input error <= s", lemma2)):
            worst = int(np.argmax(margins))
            if margins[worst] > tol:
                self.flag(name, float(times[worst]), float(margins[worst]))

        self.times.append(times)
        self.states.append(states.copy())
        self.inputs.append(np.array(inputs))
        self.last_time = float(times[-1])

    def check_pre_access(self, time: float, agent: int, error: float) -> None:
        margin = error - eval_expsum(self.threshold, time)
        if margin > self.config.monitor_tol:
            self.flag(f"input error <= s (agent {agent}, before access)", time, margin)


# =============================================================================
# SIMULATION STATE
# =============================================================================


class SimState:
    """Mutable closed-loop state; one instance per run."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.dyn = config.dynamics
        self.graph = config.graph
        self.cert: DesignCertificate = config.certificate
        self.lap = laplacian(config.graph)
        self.repository = Repository(config.graph)
        self.time = 0.0
        self.states = np.array(config.x0, dtype=float)
        self.inputs = np.zeros((self.graph.n_agents, self.dyn.m))
        self.queue: list[tuple[float, int]] = []
        self.horizon = config.horizon
        self.prediction_error = 0.0
        self.pre_access_error: list[float] = []
        self.repository_violations: list[str] = []
        self.sigma_traces: list[tuple[int, float, float, float, float]] = []
        self._grid_table: FlowTable | None = None
        self._recorder = _Recorder(config, self.lap)

    def _view(self, agent: int) -> NeighborView:
        records = {}
        for j in self.graph.neighbors(agent):
            if self.repository.has_posted(j):
                records[j] = self.repository.fetch(agent, j)
            else:
                records[j] = seed_record(j, self.states[j - 1], self.dyn.m)
        return NeighborView(
            agent_id=agent,
            access_time=self.time,
            neighbors=tuple(self.graph.neighbors(agent)),
            records=records,
        )

    def _own_input_error(self, agent: int) -> float:
        errors = input_error_field(
            self.lap, self.cert.gain.f, self.states[np.newaxis], self.inputs
        )
        return float(errors[0, agent - 1])

    def access(self, agent: int) -> CloudRecord:
        """Fetch, predict, refresh input, plan the next access, post."""
        now = self.time
        pre_error = self._own_input_error(agent) if now > 0 else 0.0
        self._recorder.check_pre_access(now, agent, pre_error)
        self.pre_access_error.append(pre_error)

        view = self._view(agent)
        for j, record in view.records.items():
            predicted = predict_neighbor(record, self.dyn, now)
            truth = self.states[j - 1]
            gap = float(np.linalg.norm(predicted - truth)) / (1.0 + float(np.linalg.norm(truth)))
            self.prediction_error = max(self.prediction_error, gap)
            if gap > PREDICTION_TOL:
                self._recorder.flag(f"prediction of agent {j} by agent {agent}", now, gap)

        own_state = self.states[agent - 1].copy()
        plan = plan_access(
            view,
            own_state,
            self.cert,
            self.dyn,
            self.horizon,
            tol_t=self.config.tol_t,
            max_step=self.config.output_step,
            tol_sigma=self.config.tol_sigma,
            keep_trace=self.config.keep_sigma_traces,
        )
        previous = self.repository.snapshot()[agent - 1]
        record = CloudRecord(
            agent_id=agent,
            last_access_time=now,
            last_state=own_state,
            held_input=plan.input,
            next_access_time=plan.next_access,
            access_count=1 if previous is None else previous.access_count + 1,
        )
        self.repository.post(record, now)
        self.inputs[agent - 1] = plan.input
        if math.isfinite(plan.next_access):
            heapq.heappush(self.queue, (plan.next_access, agent))
        if self.config.keep_sigma_traces:
            self.sigma_traces.extend((agent, now, t, sg, sv) for t, sg, sv in plan.sigma_trace)
        return record

    def _grid(self) -> FlowTable:
        if self._grid_table is None:
            self._grid_table = FlowTable(self.dyn.a, self.dyn.b, self.config.output_step)
        return self._grid_table

    def _flow_all(self, dt: float) -> np.ndarray:
        return np.vstack(
            [
                zoh_flow(self.dyn.a, self.dyn.b, x, u, dt)
                for x, u in zip(self.states, self.inputs, strict=True)
            ]
        )

    def advance(self, stop: float) -> None:
        """Propagate to `stop`, sampling grid points strictly inside (time, stop)."""
        step = self.config.output_step
        first = math.floor(self.time / step) + 1
        if first * step <= self.time:
            first += 1
        last = math.ceil(stop / step) - 1
        if last * step >= stop:
            last -= 1
        if last >= first:
            start = self._flow_all(first * step - self.time)
            block = self._grid().propagate(start, self.inputs, last - first)
            times = step * np.arange(first, last + 1)
            self._recorder.add(times, block, self.inputs)
        if stop > self.time:
            self.states = self._flow_all(stop - self.time)
            self.time = stop

    def sample(self) -> None:
        if self.time > self._recorder.last_time:
            self._recorder.add(
                np.array([self.time]), self.states[np.newaxis].copy(), self.inputs.copy()
            )

    def check_repository(self) -> None:
        problems = self.repository.check_time_consistency(self.time)
        for problem in problems:
            self._recorder.flag("repository time consistency", self.time, 0.0)
            self.repository_violations.append(problem)

    def trajectory(self) -> Trajectory:
        rec = self._recorder
        times = np.concatenate(rec.times)
        states = np.concatenate(rec.states)
        inputs = np.concatenate(rec.inputs)
        delta = disagreement(self.cert.phi, states)
        return Trajectory(
            times=times,
            states=states,
            inputs=inputs,
            delta=delta,
            delta_norm=np.linalg.norm(delta.reshape(len(times), -1), axis=1),
            eta=eval_expsum(self.cert.eta, times),
            s=eval_expsum(self.cert.threshold.envelope(), times),
            input_error=input_error_field(self.lap, self.cert.gain.f, states, inputs),
            events=list(self.repository.access_log),
            pre_access_error=np.array(self.pre_access_error),
            prediction_error=self.prediction_error,
            repository_violations=self.repository_violations,
            sigma_traces=self.sigma_traces,
        )


# =============================================================================
# OPERATIONS
# =============================================================================


def initialize(config: SimConfig) -> SimState:
    """Every agent accesses at t=0, serialized by index."""
    cert = config.certificate
    delta0 = float(np.linalg.norm(disagreement(cert.phi, np.asarray(config.x0))))
    if delta0 >= cert.eta0:
        raise SimulationError(
            f"initial disagreement {delta0:.6g} is not below eta0 = {cert.eta0:.6g}"
        )
    state = SimState(config)
    for agent in config.graph.agents:
        state.access(agent)
    state.check_repository()
    logger.info(
        f"Initialized {config.graph.n_agents} agents, ||delta(0)||={delta0:.4g}, "
        f"{len(state.queue)} accesses scheduled"
    )
    return state


def run(state: SimState, horizon: float | None = None) -> tuple[Trajectory, RunSummary]:
    if horizon is not None:
        state.horizon = horizon
    horizon = state.horizon
    state.sample()

    while True:
        next_event = state.queue[0][0] if state.queue else math.inf
        stop = min(next_event, horizon)
        state.advance(stop)
        if next_event > horizon:
            break
        state.check_repository()
        while state.queue and state.queue[0][0] == next_event:
            _, agent = heapq.heappop(state.queue)
            state.access(agent)
        state.sample()
    state.sample()

    trajectory = state.trajectory()
    summary = summarize(trajectory, state.cert)
    report = check_monitors(trajectory, summary, state.cert, state.config.tol_t)
    report.violations = [*state._recorder.violations, *report.violations]
    summary.monitors = report
    summary.notes.append(BOOTSTRAP_NOTE)
    logger.info(
        f"Run finished at t={horizon:g}s: {summary.event_count} accesses, "
        f"final ||delta||={summary.final_error:.4g}"
    )
    return trajectory, summary


def monitor_lemma1(trajectory: Trajectory, cert: DesignCertificate) -> float:
    """Worst ||delta(t)|| - eta(t) over the samples."""
    return float(np.max(trajectory.delta_norm - eval_expsum(cert.eta, trajectory.times)))


def monitor_lemma2(trajectory: Trajectory) -> float:
    """Worst ||u_tilde_i(t)|| - s(t) over samples, agents and pre-access instants."""
    worst = float(np.max(trajectory.input_error - trajectory.s[:, np.newaxis]))
    if trajectory.events:
        event_times = np.array([e.time for e in trajectory.events])
        index = np.clip(np.searchsorted(trajectory.times, event_times), 0, len(trajectory.times) - 1)
        worst = max(worst, float(np.max(trajectory.pre_access_error - trajectory.s[index])))
    return worst


def monitor_zeno(summary: RunSummary, cert: DesignCertificate, tol_t: float = 1e-7) -> bool:
    for stats in summary.agents:
        if stats.min_interval is None:
            continue
        if stats.min_interval < cert.tau(stats.agent_id) - tol_t:
            return False
    return True


def collective_residual(
    trajectory: Trajectory, dyn: AgentDynamics, lap: np.ndarray, f: np.ndarray
) -> float:
    """
    Worst relative mismatch between central differences of x and
    (I (x) A - L (x) BF) x + (I (x) B) u_tilde on uniform, event-free stretches.
    """
    times, states, inputs = trajectory.times, trajectory.states, trajectory.inputs
    if len(times) < 3:
        return 0.0
    h_left = times[1:-1] - times[:-2]
    h_right = times[2:] - times[1:-1]
    same_input = np.all(inputs[:-2] == inputs[2:], axis=(1, 2)) & np.all(
        inputs[1:-1] == inputs[2:], axis=(1, 2)
    )
    uniform = np.abs(h_left - h_right) <= 1e-12 * np.maximum(1.0, times[2:])
    keep = np.flatnonzero(same_input & uniform) + 1
    if keep.size == 0:
        return 0.0

    x = states[keep]
    derivative = (states[keep + 1] - states[keep - 1]) / (2.0 * h_left[keep - 1])[:, None, None]
    bf = dyn.b @ f
    coupled = np.einsum("ij,kjn->kin", lap, x)
    u_tilde = inputs[keep] + coupled @ f.T
    field = x @ dyn.a.T - coupled @ bf.T + u_tilde @ dyn.b.T
    scale = 1.0 + np.linalg.norm(field.reshape(len(keep), -1), axis=1)
    gap = np.linalg.norm((derivative - field).reshape(len(keep), -1), axis=1)
    return float(np.max(gap / scale))


def settle_time(times: np.ndarray, delta_norm: np.ndarray, epsilon: float) -> float | None:
    """First sample time after which ||delta|| stays at or below epsilon."""
    if times.size == 0:
        return None
    above = np.flatnonzero(delta_norm > epsilon)
    if above.size == 0:
        return float(times[0])
    if above[-1] == len(times) - 1:
        return None
    return float(times[above[-1] + 1])


def summarize(trajectory: Trajectory, cert: DesignCertificate) -> RunSummary:
    access_times: dict[int, list[float]] = {i: [] for i in range(1, cert.n_agents + 1)}
    for event in trajectory.events:
        access_times[event.agent_id].append(event.time)

    agents = []
    for agent, times in access_times.items():
        intervals = np.diff(times)
        agents.append(
            AgentAccessStats(
                agent_id=agent,
                access_count=len(times),
                min_interval=float(intervals.min()) if intervals.size else None,
                avg_interval=float(intervals.mean()) if intervals.size else None,
                tau_star=cert.tau(agent),
            )
        )

    summary = RunSummary(
        agents=agents,
        final_error=float(trajectory.delta_norm[-1]),
        epsilon=cert.epsilon,
        settle_time=settle_time(trajectory.times, trajectory.delta_norm, cert.epsilon),
        zeno_flag=False,
        horizon=float(trajectory.times[-1]),
        event_count=len(trajectory.events),
    )
    summary.zeno_flag = not monitor_zeno(summary, cert)
    return summary


def check_monitors(
    trajectory: Trajectory, summary: RunSummary, cert: DesignCertificate, tol_t: float = 1e-7
) -> MonitorReport:
    lemma1 = monitor_lemma1(trajectory, cert)
    lemma2 = monitor_lemma2(trajectory)
    zeno_ok = monitor_zeno(summary, cert, tol_t)
    violations = []
    if lemma1 > 1e-6:
        violations.append(f"delta <= eta: worst margin {lemma1:.3e}")
    if lemma2 > 1e-6:
        violations.append(f"input error <= s: worst margin {lemma2:.3e}")
    if not zeno_ok:
        violations.append("inter-access interval below tau*")
    if trajectory.repository_violations:
        violations.append(f"{len(trajectory.repository_violations)} repository violations")
    return MonitorReport(
        lemma1_margin=lemma1,
        lemma2_margin=lemma2,
        zeno_ok=zeno_ok,
        repository_ok=not trajectory.repository_violations,
        prediction_error=trajectory.prediction_error,
        violations=violations,
    )


def simulate(config: SimConfig) -> tuple[Trajectory, RunSummary]:
    """initialize + run; raises MonitorViolation after the run in strict mode."""
    trajectory, summary = run(initialize(config))
    report = summary.monitors
    if config.strict_monitors and report is not None and not report.passed:
        margin = max(report.lemma1_margin, report.lemma2_margin)
        raise MonitorViolation(report.violations[0], summary.horizon, margin)
    return trajectory, summary
