"""
Exception hierarchy for cloud-sync.

Each family maps to one CLI exit code (see ``exit_code_for``).
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_SYNTHESIS = 2
EXIT_MONITOR = 3
EXIT_IO = 4


class CloudSyncError(Exception):
    """Base class for every domain error."""

    exit_code = EXIT_SYNTHESIS


# =============================================================================
# OFFLINE DESIGN
# =============================================================================


class NumericsError(CloudSyncError, ValueError):
    """Dimension or interval precondition of a numerical kernel failed."""


class GraphError(CloudSyncError, ValueError):
    """Invalid accessibility graph, or it has no directed spanning tree."""


class SynthesisError(CloudSyncError, ValueError):
    """A step of the offline parameter design failed."""

    step = "design"

    def __init__(self, message: str):
        super().__init__(f"[{self.step}] {message}")


class StabilizabilityError(SynthesisError):
    step = "stabilizability"


class RiccatiError(SynthesisError):
    step = "riccati"


class HurwitzError(SynthesisError):
    step = "gain"


class CertificateRejected(SynthesisError):
    step = "exp-bound"


class DegenerateEnvelopeError(SynthesisError):
    step = "eta-envelope"


class ToleranceError(SynthesisError):
    step = "threshold"


# =============================================================================
# RUNTIME
# =============================================================================


class RepositoryError(CloudSyncError):
    """Contract violation on the shared repository."""

    exit_code = EXIT_MONITOR


class StaleRecordError(RepositoryError, ValueError):
    pass


class AccessCountError(RepositoryError, ValueError):
    pass


class MissingRecordError(RepositoryError, LookupError):
    pass


class UnauthorizedReadError(RepositoryError, PermissionError):
    """Read outside the accessibility graph."""


class PredictionError(CloudSyncError, ValueError):
    """Neighbor prediction requested before the record's access time."""

    exit_code = EXIT_MONITOR


class TriggerError(CloudSyncError, RuntimeError):
    """The next-access solver could not produce a valid time."""

    exit_code = EXIT_MONITOR


class SimulationError(CloudSyncError, RuntimeError):
    """Closed-loop configuration rejected before the first access."""


class MonitorViolation(CloudSyncError, RuntimeError):
    """A runtime check of the closed-loop guarantees failed."""

    exit_code = EXIT_MONITOR

    def __init__(self, monitor: str, time: float, margin: float):
        self.monitor = monitor
        self.time = time
        self.margin = margin
        super().__init__(f"{monitor} violated at t={time:.6f}s (margin {margin:.3e})")


# =============================================================================
# FILES
# =============================================================================


class ScenarioError(CloudSyncError, ValueError):
    """Scenario, certificate or summary file could not be used."""

    exit_code = EXIT_IO


class CertificateMismatchError(ScenarioError):
    """Certificate does not belong to the scenario, or was altered."""


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, CloudSyncError):
        return error.exit_code
    if isinstance(error, OSError):
        return EXIT_IO
    return 1
