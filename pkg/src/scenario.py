"""
Scenario, certificate and summary files.

Scenarios are human-written YAML parsed strictly: an unknown key anywhere is
an error. A certificate is bound to the hash of the scenario sections that
influence the design (plant, graph, design) and carries a digest of its own
payload.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import CertificateMismatchError, ScenarioError
from .graph import build_graph
from .models import (
    AccessibilityGraph,
    AgentDynamics,
    DesignCertificate,
    RunSummary,
    SimConfig,
    ThresholdParams,
)
from .synthesis import VALIDATION_HORIZON, VALIDATION_STEP, design_pipeline

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HASHED_SECTIONS = {"plant", "graph", "design"}
RANDOM_HORIZON = 4.0


def get_data_dir() -> Path:
    """Get the data directory path."""
    if env_path := os.environ.get("CLOUDSYNC_DATA_DIR"):
        return Path(env_path)
    return Path(__file__).parent.parent / "data"


def get_out_dir() -> Path:
    """Get the default root for run outputs."""
    if env_path := os.environ.get("CLOUDSYNC_OUT_DIR"):
        return Path(env_path)
    return Path(__file__).parent.parent / "runs"


# =============================================================================
# SCENARIO MODEL
# =============================================================================


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlantSection(_Section):
    a: list[list[float]]
    b: list[list[float]]


class GraphSection(_Section):
    n_agents: int = Field(ge=1)
    edges: list[tuple[int, int]] = Field(default_factory=list)


class BoundChoice(_Section):
    """A designer-chosen (kappa, rate) pair; validated before use."""

    kappa: float = Field(ge=1.0)
    rate: float


class DesignSection(_Section):
    riccati_weight: float | None = Field(default=None, gt=0)
    eta0: float = Field(gt=0)
    threshold: ThresholdParams
    target_epsilon: float | None = Field(default=None, gt=0)
    plant_bound: BoundChoice | None = None
    contraction: BoundChoice | None = None
    validation_horizon: float = Field(default=VALIDATION_HORIZON, gt=0)
    validation_step: float = Field(default=VALIDATION_STEP, gt=0)


class SimulationSection(_Section):
    x0: list[list[float]]
    horizon: float = Field(gt=0)
    output_step: float = Field(default=1e-3, gt=0)
    tol_t: float = Field(default=1e-7, gt=0)
    tol_sigma: float = Field(default=1e-9, ge=0)
    monitor_tol: float = Field(default=1e-6, ge=0)
    strict_monitors: bool = False
    keep_sigma_traces: bool = False


class Scenario(_Section):
    name: str
    schema_version: int = SCHEMA_VERSION
    description: str = ""
    plant: PlantSection
    graph: GraphSection
    design: DesignSection
    simulation: SimulationSection
    output_dir: str | None = None

    @model_validator(mode="after")
    def _check_dimensions(self) -> Scenario:
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(
                f"unsupported schema_version {self.schema_version}, expected {SCHEMA_VERSION}"
            )
        dynamics = self.dynamics()
        build_graph(self.graph.n_agents, self.graph.edges)

        x0 = np.asarray(self.simulation.x0, dtype=float)
        expected = (self.graph.n_agents, dynamics.n)
        if x0.shape != expected:
            raise ValueError(f"simulation.x0 must have shape {expected}, got {x0.shape}")
        return self

    def dynamics(self) -> AgentDynamics:
        return AgentDynamics(a=self.plant.a, b=self.plant.b)

    def accessibility_graph(self) -> AccessibilityGraph:
        return build_graph(self.graph.n_agents, self.graph.edges)


def resolve_scenario(name_or_path: str | Path) -> Path:
    """A file path, or the name of a bundled scenario under data/scenarios/."""
    path = Path(name_or_path)
    if path.exists():
        return path
    bundled = get_data_dir() / "scenarios" / f"{name_or_path}.yaml"
    if bundled.exists():
        return bundled
    raise ScenarioError(f"Scenario not found: {name_or_path}")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ScenarioError(f"Cannot read scenario {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ScenarioError(f"YAML parse error in {path}:\n{e}") from e
    if not isinstance(data, dict):
        raise ScenarioError(f"Scenario {path} must be a mapping, got {type(data).__name__}")

    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(f"Validation error in {path}:\n{e}") from e
    logger.debug(f"Loaded scenario {scenario.name} from {path}")
    return scenario


def dump_scenario(scenario: Scenario, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(scenario.model_dump(mode="json"), f, sort_keys=False)
    return path


def _canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def scenario_hash(scenario: Scenario) -> str:
    """SHA-256 of the design-relevant sections; edge order does not matter."""
    payload = scenario.model_dump(mode="json", include=HASHED_SECTIONS)
    payload["graph"]["edges"] = sorted(payload["graph"]["edges"])
    return hashlib.sha256(_canonical_json(payload).encode()).hexdigest()


# =============================================================================
# DESIGN AND RUN SETUP
# =============================================================================


def design_certificate(scenario: Scenario) -> DesignCertificate:
    design = scenario.design
    return design_pipeline(
        scenario.dynamics(),
        scenario.accessibility_graph(),
        design.threshold,
        design.eta0,
        design.riccati_weight,
        plant_bound=None if design.plant_bound is None else (
            design.plant_bound.kappa, design.plant_bound.rate
        ),
        contraction=None if design.contraction is None else (
            design.contraction.kappa, design.contraction.rate
        ),
        target_epsilon=design.target_epsilon,
        scenario_hash=scenario_hash(scenario),
        validation_horizon=design.validation_horizon,
        validation_step=design.validation_step,
    )


def sim_config(
    scenario: Scenario,
    certificate: DesignCertificate,
    *,
    horizon: float | None = None,
    output_step: float | None = None,
    strict_monitors: bool | None = None,
) -> SimConfig:
    """Build the run configuration; keyword overrides win over the scenario."""
    sim = scenario.simulation
    return SimConfig(
        dynamics=scenario.dynamics(),
        graph=scenario.accessibility_graph(),
        certificate=certificate,
        x0=sim.x0,
        horizon=sim.horizon if horizon is None else horizon,
        output_step=sim.output_step if output_step is None else output_step,
        tol_t=sim.tol_t,
        tol_sigma=sim.tol_sigma,
        monitor_tol=sim.monitor_tol,
        strict_monitors=sim.strict_monitors if strict_monitors is None else strict_monitors,
        keep_sigma_traces=sim.keep_sigma_traces,
    )


# =============================================================================
# CERTIFICATE AND SUMMARY FILES
# =============================================================================


def _yaml_ready(value: Any) -> Any:
    """Tuples to lists, enums to values, numpy scalars to floats."""
    if isinstance(value, dict):
        return {k: _yaml_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_yaml_ready(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.generic):
        return value.item()
    return value


def _digest(payload: dict) -> str:
    return hashlib.sha256(_canonical_json(payload).encode()).hexdigest()


def save_certificate(certificate: DesignCertificate, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _yaml_ready(certificate.model_dump())
    document = {"certificate": payload, "digest": _digest(payload)}
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(document, f, sort_keys=False)
    logger.info(f"Certificate written to {path}")
    return path


def load_certificate(path: str | Path, expected_hash: str | None = None) -> DesignCertificate:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            document = yaml.safe_load(f)
    except OSError as e:
        raise ScenarioError(f"Cannot read certificate {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ScenarioError(f"YAML parse error in {path}:\n{e}") from e

    if not isinstance(document, dict) or set(document) != {"certificate", "digest"}:
        raise ScenarioError(f"{path} is not a certificate file")
    payload = document["certificate"]
    if _digest(payload) != document["digest"]:
        raise CertificateMismatchError(f"{path}: certificate digest mismatch (file was edited)")

    try:
        certificate = DesignCertificate.model_validate(payload)
    except ValidationError as e:
        raise ScenarioError(f"Validation error in {path}:\n{e}") from e
    if expected_hash is not None and certificate.scenario_hash != expected_hash:
        raise CertificateMismatchError(
            f"{path} was designed for scenario hash {certificate.scenario_hash[:12]}..., "
            f"the scenario hashes to {expected_hash[:12]}..."
        )
    return certificate


def save_summary(summary: RunSummary, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(_yaml_ready(summary.model_dump()), f, sort_keys=False)
    return path


def load_summary(path: str | Path) -> RunSummary:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
        return RunSummary.model_validate(data)
    except OSError as e:
        raise ScenarioError(f"Cannot read summary {path}: {e}") from e
    except (yaml.YAMLError, ValidationError) as e:
        raise ScenarioError(f"Malformed summary {path}:\n{e}") from e


# =============================================================================
# RANDOM SCENARIOS
# =============================================================================


def _random_plant(rng: np.random.Generator, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """
    A with eigenvalue real parts in [-0.5, 0.3], rotated by a random orthogonal Q.

    Half of the draws add strictly upper-triangular coupling, so A is non-normal
    and its exponential bound needs kappa > 1.
    """
    core = np.diag(rng.uniform(-0.5, 0.3, size=n))
    rotation = n >= 2 and rng.random() < 0.5
    if rotation:
        omega = rng.uniform(0.1, 0.5)
        core[0, 1], core[1, 0] = omega, -omega
        core[1, 1] = core[0, 0]
    if n >= 2 and rng.random() < 0.5:
        coupling = np.triu(rng.uniform(-1.0, 1.0, size=(n, n)), k=1)
        if rotation:
            # keep the rotation block intact so the spectrum is unchanged
            coupling[0, 1] = 0.0
        core += coupling
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    b = rng.normal(size=(n, m))
    return q @ core @ q.T, b / max(1.0, float(np.linalg.norm(b, 2)))


def _random_tree_edges(rng: np.random.Generator, n_agents: int) -> list[tuple[int, int]]:
    """Spanning tree rooted at a random agent, plus at most one extra edge."""
    order = [int(v) + 1 for v in rng.permutation(n_agents)]
    edges = [(order[int(rng.integers(0, k))], order[k]) for k in range(1, n_agents)]
    if n_agents > 2 and rng.random() < 0.5:
        j, i = (int(v) + 1 for v in rng.choice(n_agents, size=2, replace=False))
        if (j, i) not in edges:
            edges.append((j, i))
    return edges


def random_scenario(seed: int) -> Scenario:
    """Small reproducible scenario; possibly unstable plant, always a spanning tree."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, n + 1))
    n_agents = int(rng.integers(2, 6))
    a, b = _random_plant(rng, n, m)
    x0 = rng.normal(scale=0.5, size=(n_agents, n))

    s_inf = float(rng.uniform(0.01, 0.05))
    threshold = ThresholdParams(
        s0=s_inf + float(rng.uniform(0.2, 1.0)),
        s_inf=s_inf,
        lambda_s=float(rng.uniform(0.2, 0.6)),
    )
    # ||delta(0)|| <= ||I - 1 phi^T|| ||x0|| <= (1 + sqrt(N)) ||x0||
    eta0 = (1.0 + math.sqrt(n_agents)) * float(np.linalg.norm(x0)) + 1.0

    return Scenario(
        name=f"random-{seed}",
        description=f"generated by random_scenario({seed})",
        plant=PlantSection(a=a.tolist(), b=b.tolist()),
        graph=GraphSection(n_agents=n_agents, edges=_random_tree_edges(rng, n_agents)),
        design=DesignSection(eta0=eta0, threshold=threshold),
        simulation=SimulationSection(x0=x0.tolist(), horizon=RANDOM_HORIZON),
    )
