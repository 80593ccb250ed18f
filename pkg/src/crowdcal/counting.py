"""Per-window unique-device counting and choke-point camera aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import CameraEvent, Direction, ProbeRecord, TimeWindow


class ContractViolation(ValueError):
    pass


@dataclass(frozen=True)
class WindowProbeSet:
    """The probes one zone's sniffer captured during one window."""

    window: TimeWindow
    zone_id: str
    probes: Sequence[ProbeRecord]

    @classmethod
    def checked(cls, window: TimeWindow, zone_id: str, probes: Iterable[ProbeRecord],
                sniffer_id: str | None = None) -> "WindowProbeSet":
        probes = tuple(probes)
        for p in probes:
            if not window.contains(p.timestamp):
                raise ContractViolation(f"probe at {p.timestamp} lies outside window {window.index}")
            if sniffer_id is not None and p.sniffer_id != sniffer_id:
                raise ContractViolation(f"probe from sniffer {p.sniffer_id} does not belong to zone {zone_id}")
        return cls(window, zone_id, probes)


def count_devices(probes: WindowProbeSet | Iterable[ProbeRecord]) -> int:
    """Number of distinct device ids among the window's probes."""
    records = probes.probes if isinstance(probes, WindowProbeSet) else probes
    d = 0
    seen: set[str] = set()
    for p in records:
        if p.device not in seen:
            d += 1
            seen.add(p.device)
    return d


def camera_total(events: Iterable[CameraEvent], window: TimeWindow) -> int:
    """Move-in plus move-out events in the window, all cameras merged into one."""
    e_in = e_out = 0
    for ev in events:
        if not window.contains(ev.timestamp):
            raise ContractViolation(f"camera event at {ev.timestamp} lies outside window {window.index}")
        if ev.direction is Direction.MOVE_IN:
            e_in += ev.count
        else:
            e_out += ev.count
    return e_in + e_out
