"""
Pydantic models for the cloud-sync domain.

Matrices are stored as read-only numpy arrays so frozen models stay immutable
end to end. They serialize back to nested lists of floats.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Annotated, Any

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_validator,
    model_validator,
)


def _frozen_real(value: Any) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


def _frozen_complex(value: Any) -> np.ndarray:
    array = np.asarray(value)
    if array.dtype.kind in "fiu" and array.ndim == 2 and array.shape[1] == 2:
        # [[re, im], ...] as written to files
        array = array[:, 0] + 1j * array[:, 1]
    array = np.array(array, dtype=complex)
    array.setflags(write=False)
    return array


def _real_to_list(value: np.ndarray) -> list:
    return np.asarray(value, dtype=float).tolist()


def _complex_to_pairs(value: np.ndarray) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(value).ravel()]


RealArray = Annotated[
    np.ndarray,
    BeforeValidator(_frozen_real),
    PlainSerializer(_real_to_list, return_type=list),
]
ComplexArray = Annotated[
    np.ndarray,
    BeforeValidator(_frozen_complex),
    PlainSerializer(_complex_to_pairs, return_type=list),
]


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


# =============================================================================
# ENUMS
# =============================================================================


class BoundSource(str, Enum):
    """Where an exponential bound pair came from."""

    SYNTHESIZED = "synthesized"
    DESIGNER = "designer"


# =============================================================================
# ENVELOPES
# =============================================================================


class ExpSum(BaseModel):
    """t -> sum_k c_k exp(-r_k (t - offset_time)); terms are (c_k, r_k)."""

    model_config = ConfigDict(frozen=True)

    terms: tuple[tuple[float, float], ...] = ()
    offset_time: float = 0.0

    def scaled(self, factor: float) -> ExpSum:
        return ExpSum(
            terms=tuple((c * factor, r) for c, r in self.terms),
            offset_time=self.offset_time,
        )

    def plus(self, other: ExpSum) -> ExpSum:
        if other.offset_time != self.offset_time:
            raise ValueError("cannot add envelopes with different time origins")
        return ExpSum(terms=self.terms + other.terms, offset_time=self.offset_time)


class ThresholdParams(BaseModel):
    """s(t) = s_inf + (s0 - s_inf) exp(-lambda_s t)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    s0: float = Field(gt=0)
    s_inf: float = Field(gt=0)
    lambda_s: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_order(self) -> ThresholdParams:
        if self.s0 < self.s_inf:
            raise ValueError(f"threshold needs s0 >= s_inf, got {self.s0} < {self.s_inf}")
        return self

    def envelope(self) -> ExpSum:
        return ExpSum(terms=((self.s_inf, 0.0), (self.s0 - self.s_inf, self.lambda_s)))


# =============================================================================
# PLANT AND GRAPH
# =============================================================================


class AgentDynamics(_Frozen):
    """Common agent model dx/dt = A x + B u."""

    a: RealArray
    b: RealArray

    @model_validator(mode="after")
    def _check_shapes(self) -> AgentDynamics:
        if self.a.ndim != 2 or self.a.shape[0] != self.a.shape[1]:
            raise ValueError(f"A must be square, got shape {self.a.shape}")
        if self.b.ndim != 2 or self.b.shape[0] != self.a.shape[0]:
            raise ValueError(f"B must have {self.a.shape[0]} rows, got shape {self.b.shape}")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("plant matrices must be finite")
        return self

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


class AccessibilityGraph(BaseModel):
    """
    Directed accessibility graph with 1-based agent indices.

    An edge (j, i) lets agent i read agent j's record.
    """

    model_config = ConfigDict(frozen=True)

    n_agents: int = Field(ge=1)
    edges: frozenset[tuple[int, int]] = frozenset()

    @model_validator(mode="after")
    def _check_edges(self) -> AccessibilityGraph:
        for j, i in self.edges:
            if not (1 <= j <= self.n_agents and 1 <= i <= self.n_agents):
                raise ValueError(f"edge ({j}, {i}) outside 1..{self.n_agents}")
            if j == i:
                raise ValueError(f"self-loop on agent {i}")
        return self

    @property
    def agents(self) -> range:
        return range(1, self.n_agents + 1)

    @property
    def neighbor_sets(self) -> dict[int, frozenset[int]]:
        return {
            i: frozenset(j for j, target in self.edges if target == i) for i in self.agents
        }

    def neighbors(self, agent: int) -> list[int]:
        return sorted(j for j, target in self.edges if target == agent)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


class Spectrum(_Frozen):
    laplacian: RealArray
    eigenvalues: ComplexArray
    phi: RealArray
    l_check: RealArray
    x1: RealArray

    @property
    def n_agents(self) -> int:
        return self.laplacian.shape[0]


# =============================================================================
# DESIGN CERTIFICATE
# =============================================================================


class GainDesign(_Frozen):
    f: RealArray
    p: RealArray
    rho: float = Field(gt=0)


class ExpBoundCert(BaseModel):
    """||exp(M t)|| <= kappa exp(rate t) on the validation grid."""

    model_config = ConfigDict(frozen=True)

    kappa: float = Field(ge=1.0)
    rate: float
    target: str
    source: BoundSource = BoundSource.SYNTHESIZED
    validated_until: float = Field(default=0.0, ge=0)
    worst_margin: float = 0.0


class DesignCertificate(_Frozen):
    """Every offline constant the closed loop relies on."""

    scenario_hash: str = ""
    n_agents: int = Field(ge=1)
    gain: GainDesign
    plant_bound: ExpBoundCert
    contraction: ExpBoundCert
    b_prime_norm: float = Field(ge=0)
    beta: list[float]
    gamma: list[float]
    tau_star: list[float]
    epsilon: float = Field(ge=0)
    threshold: ThresholdParams
    eta0: float = Field(gt=0)
    eta_bar: float = Field(gt=0)
    eta: ExpSum
    eigenvalues: ComplexArray
    phi: RealArray
    notes: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_constants(self) -> DesignCertificate:
        for name in ("beta", "gamma", "tau_star"):
            values = getattr(self, name)
            if len(values) != self.n_agents:
                raise ValueError(f"{name} has {len(values)} entries for {self.n_agents} agents")
        if any(t <= 0 for t in self.tau_star):
            raise ValueError("every tau_star must be positive")
        if any(g < 0 for g in self.gamma):
            raise ValueError("gamma constants must be nonnegative")
        if self.contraction.rate >= 0:
            raise ValueError("contraction rate must be negative")
        return self

    @property
    def decay(self) -> float:
        """lambda of the contraction pair."""
        return -self.contraction.rate

    def tau(self, agent: int) -> float:
        return self.tau_star[agent - 1]

    def mu(self, agent: int) -> ExpSum:
        """mu_j(t) = beta_j eta(t) + s(t)."""
        return self.eta.scaled(self.beta[agent - 1]).plus(self.threshold.envelope())


# =============================================================================
# CLOUD
# =============================================================================


class CloudRecord(_Frozen):
    """One agent's row in the shared repository."""

    agent_id: int = Field(ge=1)
    last_access_time: float
    last_state: RealArray
    held_input: RealArray
    next_access_time: float
    access_count: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_times(self) -> CloudRecord:
        if not math.isinf(self.next_access_time) and (
            self.next_access_time <= self.last_access_time
        ):
            raise ValueError(
                f"next access {self.next_access_time} must follow last access "
                f"{self.last_access_time}"
            )
        return self


class AccessLogEntry(_Frozen):
    time: float
    agent_id: int
    record: CloudRecord


# =============================================================================
# CONTROLLER
# =============================================================================


class NeighborView(_Frozen):
    """Records fetched by one agent at its access instant."""

    agent_id: int
    access_time: float
    neighbors: tuple[int, ...]
    records: dict[int, CloudRecord]

    @field_validator("records")
    @classmethod
    def _copy_records(cls, records: dict[int, CloudRecord]) -> dict[int, CloudRecord]:
        return dict(sorted(records.items()))


class ControlPlan(_Frozen):
    input: RealArray
    next_access: float
    sigma_trace: list[tuple[float, float, float]] = Field(default_factory=list)
    samples_evaluated: int = 0


# =============================================================================
# SIMULATION
# =============================================================================


class SimConfig(_Frozen):
    dynamics: AgentDynamics
    graph: AccessibilityGraph
    certificate: DesignCertificate
    x0: RealArray
    horizon: float = Field(gt=0)
    output_step: float = Field(default=1e-3, gt=0)
    tol_t: float = Field(default=1e-7, gt=0)
    tol_sigma: float = Field(default=1e-9, ge=0)
    monitor_tol: float = Field(default=1e-6, ge=0)
    strict_monitors: bool = False
    keep_sigma_traces: bool = False

    @model_validator(mode="after")
    def _check_dimensions(self) -> SimConfig:
        expected = (self.graph.n_agents, self.dynamics.n)
        if self.x0.shape != expected:
            raise ValueError(f"x0 must have shape {expected}, got {self.x0.shape}")
        if self.certificate.n_agents != self.graph.n_agents:
            raise ValueError("certificate and graph disagree on the number of agents")
        return self


class Trajectory(_Frozen):
    """Columnar samples on the union of the output grid and event instants."""

    times: RealArray
    states: RealArray
    inputs: RealArray
    delta: RealArray
    delta_norm: RealArray
    eta: RealArray
    s: RealArray
    input_error: RealArray
    events: list[AccessLogEntry]
    pre_access_error: RealArray
    prediction_error: float = 0.0
    repository_violations: list[str] = Field(default_factory=list)
    sigma_traces: list[tuple[int, float, float, float, float]] = Field(default_factory=list)


class AgentAccessStats(BaseModel):
    agent_id: int
    access_count: int
    min_interval: float | None = None
    avg_interval: float | None = None
    tau_star: float


class MonitorReport(BaseModel):
    lemma1_margin: float
    lemma2_margin: float
    zeno_ok: bool
    repository_ok: bool
    prediction_error: float
    violations: list[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


class RunSummary(BaseModel):
    agents: list[AgentAccessStats]
    final_error: float
    epsilon: float
    settle_time: float | None
    zeno_flag: bool
    horizon: float
    event_count: int
    monitors: MonitorReport | None = None
    notes: list[str] = Field(default_factory=list)
