"""
Shared repository of per-agent records.

Each access is an atomic read-then-write at a single timestamp. Reads are
restricted to the accessibility graph; `snapshot` bypasses that restriction
and exists for monitors and tests only.
"""

from __future__ import annotations

import logging

from .errors import (
    AccessCountError,
    MissingRecordError,
    StaleRecordError,
    UnauthorizedReadError,
)
from .models import AccessibilityGraph, AccessLogEntry, CloudRecord

logger = logging.getLogger(__name__)


class Repository:
    """
    Latest record per agent plus an append-only access log.

    Owned by the engine; observers receive immutable records.
    """

    def __init__(self, graph: AccessibilityGraph):
        self.graph = graph
        self._neighbors = graph.neighbor_sets
        self._records: dict[int, CloudRecord | None] = {i: None for i in graph.agents}
        self._log: list[AccessLogEntry] = []

    @property
    def access_log(self) -> tuple[AccessLogEntry, ...]:
        return tuple(self._log)

    def post(self, record: CloudRecord, now: float) -> Repository:
        """Replace the poster's record with one stamped at `now`."""
        agent = record.agent_id
        if agent not in self._records:
            raise MissingRecordError(f"agent {agent} is not part of this repository")
        if record.last_access_time != now:
            raise StaleRecordError(
                f"agent {agent} posted a record stamped {record.last_access_time} at t={now}"
            )

        previous = self._records[agent]
        expected = 1 if previous is None else previous.access_count + 1
        if previous is not None and now < previous.last_access_time:
            raise StaleRecordError(
                f"agent {agent} posted at t={now} before its previous access "
                f"{previous.last_access_time}"
            )
        if record.access_count != expected:
            raise AccessCountError(
                f"agent {agent} posted access {record.access_count}, expected {expected}"
            )

        self._records[agent] = record
        self._log.append(AccessLogEntry(time=now, agent_id=agent, record=record))
        logger.debug(
            f"t={now:.6f} agent {agent} posted access {record.access_count}, "
            f"next at {record.next_access_time:.6f}"
        )
        return self

    def fetch(self, reader: int, target: int) -> CloudRecord:
        if reader not in self._records:
            raise MissingRecordError(f"agent {reader} is not part of this repository")
        if target != reader and target not in self._neighbors[reader]:
            raise UnauthorizedReadError(f"agent {reader} may not read agent {target}'s record")
        record = self._records.get(target)
        if record is None:
            raise MissingRecordError(f"agent {target} has not posted yet")
        return record.model_copy()

    def has_posted(self, agent: int) -> bool:
        return self._records.get(agent) is not None

    def snapshot(self) -> list[CloudRecord | None]:
        return [self._records[i] for i in self.graph.agents]

    def check_time_consistency(self, now: float) -> list[str]:
        """Records whose access window does not contain `now`."""
        problems = []
        for record in self.snapshot():
            if record is None:
                continue
            if not (record.last_access_time <= now <= record.next_access_time):
                problems.append(
                    f"t={now:.9f}: agent {record.agent_id} window "
                    f"[{record.last_access_time:.9f}, {record.next_access_time:.9f}]"
                )
        return problems
