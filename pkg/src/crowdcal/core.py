"""Shared domain types, tumbling-window arithmetic and zone topology.

Instants are UTC epoch seconds (floats) rounded to millisecond resolution.
Window arithmetic is done on integer milliseconds so boundaries never drift.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

DEFAULT_WINDOW_SECONDS = 900.0

_DEVICE_ID_RE = re.compile(r"^[0-9a-f]{64}$")
RAW_MAC_RE = re.compile(r"^[0-9A-Fa-f]{2}(:[0-9A-Fa-f]{2}){5}$")
# Non-standard wire format accepted on input: "YYYY.MM.DD hh:mm:ss:sss Z"
_DOTTED_TS_RE = re.compile(
    r"^(\d{4})\.(\d{2})\.(\d{2}) (\d{2}):(\d{2}):(\d{2}):(\d{3}) ?(Z|[+-]\d{2}:?\d{2})$"
)


class OutOfRangeError(ValueError):
    pass


class TopologyError(ValueError):
    """Raised by validate_topology; ``violations`` lists every problem found."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


# ---------------------------------------------------------------------------
# time
# ---------------------------------------------------------------------------

def to_millis(t: float) -> int:
    return int(round(t * 1000.0))


def parse_instant(value) -> float:
    """Parse a UTC instant from epoch seconds, ISO 8601, or the dotted legacy form."""
    if isinstance(value, bool):
        raise ValueError(f"not a timestamp: {value!r}")
    if isinstance(value, (int, float)):
        t = float(value)
    elif isinstance(value, datetime):
        if value.tzinfo is None:
            raise ValueError("naive datetime; an explicit UTC offset is required")
        t = value.timestamp()
    elif isinstance(value, str):
        m = _DOTTED_TS_RE.match(value.strip())
        if m:
            y, mo, d, hh, mi, ss, ms, tz = m.groups()
            tz = "+00:00" if tz == "Z" else (tz if ":" in tz else tz[:3] + ":" + tz[3:])
            value = f"{y}-{mo}-{d}T{hh}:{mi}:{ss}.{ms}{tz}"
        s = value.strip()
        if s.endswith("Z"):
            s = s[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(s)
        except ValueError:
            raise ValueError(f"malformed timestamp: {value!r}") from None
        if dt.tzinfo is None:
            raise ValueError(f"timestamp lacks UTC offset: {value!r}")
        t = dt.timestamp()
    else:
        raise ValueError(f"not a timestamp: {value!r}")
    if not math.isfinite(t):
        raise ValueError(f"non-finite timestamp: {value!r}")
    return to_millis(t) / 1000.0


def format_instant(t: float) -> str:
    """ISO 8601 with milliseconds and an explicit +00:00 offset."""
    ms = to_millis(t)
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{ms % 1000:03d}+00:00"


def midnight_utc(t: float) -> float:
    return math.floor(t / 86400.0) * 86400.0


@dataclass(frozen=True)
class TimeWindow:
    index: int
    start: float
    duration: float

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("window index must be non-negative")
        if not self.duration > 0:
            raise ValueError("window duration must be positive")

    @property
    def end(self) -> float:
        return to_millis(self.start + self.duration) / 1000.0

    def contains(self, t: float) -> bool:
        return to_millis(self.start) <= to_millis(t) < to_millis(self.start) + to_millis(self.duration)


def window_for(timestamp: float, duration: float = DEFAULT_WINDOW_SECONDS,
               epoch_origin: float = 0.0) -> TimeWindow:
    """Return the half-open tumbling window [start, start + duration) holding ``timestamp``."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    t_ms, o_ms, d_ms = to_millis(timestamp), to_millis(epoch_origin), to_millis(duration)
    if t_ms < o_ms:
        raise OutOfRangeError(f"timestamp {timestamp} precedes epoch origin {epoch_origin}")
    index = (t_ms - o_ms) // d_ms
    return window_at(index, duration, epoch_origin)


def window_at(index: int, duration: float, epoch_origin: float) -> TimeWindow:
    start = (to_millis(epoch_origin) + index * to_millis(duration)) / 1000.0
    return TimeWindow(index=index, start=start, duration=duration)


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

def check_device_id(value: str) -> str:
    if RAW_MAC_RE.match(value):
        raise ValueError("raw MAC address cannot be used as a device id")
    if not _DEVICE_ID_RE.match(value):
        raise ValueError(f"device id must be 64 lowercase hex characters, got {len(value)} chars")
    return value


class Direction(str, Enum):
    MOVE_IN = "MoveIn"
    MOVE_OUT = "MoveOut"


@dataclass(frozen=True, slots=True)
class ProbeRecord:
    device: str  # salted-hash DeviceId
    sniffer_id: str
    timestamp: float
    sequence_number: int
    rssi: Optional[int] = None

    def to_json(self) -> dict:
        return {"device": self.device, "sniffer_id": self.sniffer_id,
                "timestamp": format_instant(self.timestamp),
                "sequence_number": self.sequence_number, "rssi": self.rssi}


@dataclass(frozen=True)
class CameraEvent:
    camera_id: str
    direction: Direction
    timestamp: float
    count: int = 1
    event_id: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.count, int) or isinstance(self.count, bool) or self.count < 1:
            raise ValueError("camera event count must be an integer >= 1")
        if not isinstance(self.direction, Direction):
            object.__setattr__(self, "direction", Direction(self.direction))
        if not math.isfinite(self.timestamp):
            raise ValueError("camera event timestamp must be finite")

    @classmethod
    def from_json(cls, doc: dict) -> "CameraEvent":
        try:
            return cls(camera_id=str(doc["camera_id"]), direction=Direction(doc["direction"]),
                       timestamp=parse_instant(doc["timestamp"]), count=doc.get("count", 1),
                       event_id=doc.get("event_id"))
        except KeyError as exc:
            raise ValueError(f"missing field {exc.args[0]}") from None

    def to_json(self) -> dict:
        doc = {"camera_id": self.camera_id, "direction": self.direction.value,
               "timestamp": format_instant(self.timestamp), "count": self.count}
        if self.event_id is not None:
            doc["event_id"] = self.event_id
        return doc


@dataclass(frozen=True)
class WindowMeasurement:
    window: TimeWindow
    zone_id: str
    device_count: int
    camera_total: Optional[int] = None

    def __post_init__(self):
        if self.device_count < 0:
            raise ValueError("device_count must be non-negative")
        if self.camera_total is not None and self.camera_total < 0:
            raise ValueError("camera_total must be non-negative")


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Zone:
    zone_id: str
    sniffer_id: str
    latitude: float = 0.0
    longitude: float = 0.0
    is_choke_point: bool = False
    camera_ids: tuple[str, ...] = ()
    mac_address: str = ""  # the sniffer's own hardware address, broker metadata only

    @classmethod
    def from_json(cls, doc: dict) -> "Zone":
        geo = doc.get("geolocation") or {}
        return cls(zone_id=str(doc["zone_id"]), sniffer_id=str(doc["sniffer_id"]),
                   latitude=float(geo.get("latitude", 0.0)),
                   longitude=float(geo.get("longitude", 0.0)),
                   is_choke_point=bool(doc.get("is_choke_point", False)),
                   camera_ids=tuple(doc.get("camera_ids") or ()),
                   mac_address=str(doc.get("mac_address", "")))

    def to_json(self) -> dict:
        return {"zone_id": self.zone_id, "sniffer_id": self.sniffer_id,
                "geolocation": {"latitude": self.latitude, "longitude": self.longitude},
                "is_choke_point": self.is_choke_point, "camera_ids": list(self.camera_ids),
                "mac_address": self.mac_address}


@dataclass(frozen=True)
class ZoneTopology:
    zones: tuple[Zone, ...] = field(default_factory=tuple)

    @property
    def choke(self) -> Zone:
        return next(z for z in self.zones if z.is_choke_point)

    def ordered(self) -> list[Zone]:
        """Zones with the choke point first (index 0), others in declaration order."""
        return [self.choke] + [z for z in self.zones if not z.is_choke_point]

    def zone(self, zone_id: str) -> Zone:
        for z in self.zones:
            if z.zone_id == zone_id:
                return z
        raise KeyError(zone_id)

    def zone_for_sniffer(self, sniffer_id: str) -> Optional[Zone]:
        for z in self.zones:
            if z.sniffer_id == sniffer_id:
                return z
        return None

    def camera_zone(self, camera_id: str) -> Optional[Zone]:
        for z in self.zones:
            if camera_id in z.camera_ids:
                return z
        return None

    @classmethod
    def from_json(cls, doc: dict) -> "ZoneTopology":
        return cls(zones=tuple(Zone.from_json(z) for z in doc["zones"]))

    def to_json(self) -> dict:
        return {"zones": [z.to_json() for z in self.zones]}


def validate_topology(topology: ZoneTopology) -> ZoneTopology:
    problems: list[str] = []
    chokes = [z for z in topology.zones if z.is_choke_point]
    if not chokes:
        problems.append("no choke point")
    elif len(chokes) > 1:
        problems.append("multiple choke points: " + ", ".join(z.zone_id for z in chokes))
    for z in chokes:
        if not z.camera_ids:
            problems.append(f"choke point lacks camera: {z.zone_id}")
    for z in topology.zones:
        if not z.is_choke_point and z.camera_ids:
            problems.append(f"non-choke zone has cameras: {z.zone_id}")
        if not (-90.0 <= z.latitude <= 90.0 and -180.0 <= z.longitude <= 180.0):
            problems.append(f"geolocation out of range: {z.zone_id}")
    problems += [f"duplicate zone_id: {i}" for i in _dupes(z.zone_id for z in topology.zones)]
    problems += [f"duplicate sniffer_id: {i}" for i in _dupes(z.sniffer_id for z in topology.zones)]
    problems += [f"duplicate camera_id: {i}"
                 for i in _dupes(c for z in topology.zones for c in z.camera_ids)]
    if problems:
        raise TopologyError(problems)
    return topology


def _dupes(items: Iterable[str]) -> list[str]:
    seen, dup = set(), []
    for i in items:
        if i in seen and i not in dup:
            dup.append(i)
        seen.add(i)
    return dup


def load_topology(path: str | Path) -> ZoneTopology:
    with open(path) as fh:
        return validate_topology(ZoneTopology.from_json(json.load(fh)))
