from typing import Iterable

from pydantic import BaseModel, Field

from services.errors import DuplicateCorrelation
from services.log import Log
from tracing.events import DEVICE_CATEGORIES, Category, TraceEvent


class CorrelationIndex(BaseModel):
    """
    Links between host API calls and the device activity they issued.

    Orphan device events stay usable by RCA; they are only excluded from
    host-attribution views.
    """

    # correlation id -> (host event id, device event id)
    pairs: dict[int, tuple[int, int]] = Field(default_factory=dict)

    # Device event ids without a host partner.
    orphans: list[int] = Field(default_factory=list)

    # Correlation ids whose device start precedes the host start.
    causality_violations: list[int] = Field(default_factory=list)

    def host_for(self, device_event_id: int) -> int | None:
        for host_id, device_id in self.pairs.values():
            if device_id == device_event_id:
                return host_id
        return None


def link_correlations(events: Iterable[TraceEvent]) -> CorrelationIndex:
    """
    Pair RuntimeApi events with GpuKernel/MemCopy events by correlation id.

    Parameters
    ----------
    events : Iterable[TraceEvent]
        Calibrated trace.

    Returns
    -------
    CorrelationIndex
        One-to-one pairs plus orphan device events.

    Raises
    ------
    DuplicateCorrelation
        If a correlation id appears on two host events.
    """
    hosts: dict[int, TraceEvent] = {}
    devices: list[TraceEvent] = []
    for event in sorted(events, key=TraceEvent.sort_key):
        if event.correlation_id is None:
            continue
        if event.category is Category.RUNTIME_API:
            if event.correlation_id in hosts:
                raise DuplicateCorrelation(
                    f"Correlation id {event.correlation_id} appears on two host events",
                    {
                        "correlation_id": event.correlation_id,
                        "event_ids": [hosts[event.correlation_id].event_id, event.event_id],
                    },
                )
            hosts[event.correlation_id] = event
        elif event.category in DEVICE_CATEGORIES:
            devices.append(event)

    index = CorrelationIndex()
    for device in devices:
        host = hosts.get(device.correlation_id)
        if host is None or device.correlation_id in index.pairs:
            index.orphans.append(device.event_id)
            continue
        index.pairs[device.correlation_id] = (host.event_id, device.event_id)
        if device.start_ts < host.start_ts:
            index.causality_violations.append(device.correlation_id)

    if index.orphans:
        Log.warning(f"{len(index.orphans)} device events have no host-side partner")
    if index.causality_violations:
        Log.warning(f"{len(index.causality_violations)} correlated device events start before their host call")
    Log.info(f"Linked {len(index.pairs)} host/device correlation pairs")
    return index
