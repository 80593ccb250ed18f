"""Validation, anonymization and persistence of incoming sensor reports.

Raw MAC addresses only live in memory between parsing a report and hashing
it; nothing downstream of :meth:`Ingestor.ingest_probe` ever sees one.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import threading
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Optional

from .core import (
    RAW_MAC_RE, CameraEvent, OutOfRangeError, ProbeRecord, ZoneTopology, format_instant,
    midnight_utc, parse_instant, to_millis, window_for,
)

log = logging.getLogger(__name__)


class MalformedMacError(ValueError):
    pass


class IngestError(ValueError):
    """A rejected report; ``reason`` is a short machine-readable code."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass(frozen=True)
class SaltConfig:
    salt: bytes
    rotation_period: Optional[float] = None  # seconds; None keeps device ids stable
    origin: float = 0.0

    def __post_init__(self):
        if len(self.salt) < 16:
            raise ValueError("salt must be at least 16 bytes")
        if self.rotation_period is not None and not self.rotation_period > 0:
            raise ValueError("rotation_period must be positive")

    @classmethod
    def from_hex(cls, value: str, rotation_period: Optional[float] = None) -> "SaltConfig":
        return cls(bytes.fromhex(value), rotation_period)

    @classmethod
    def generate(cls) -> "SaltConfig":
        return cls(os.urandom(32))

    def check_window(self, window_seconds: float) -> None:
        if self.rotation_period is None:
            return
        if to_millis(self.rotation_period) % to_millis(window_seconds):
            raise ValueError("salt rotation period must be a whole number of windows")

    def epoch(self, at: float) -> int:
        if self.rotation_period is None:
            return 0
        return int((to_millis(at) - to_millis(self.origin)) // to_millis(self.rotation_period))


def normalize_mac(mac: str) -> str:
    """Upper-case colon form; dash separators are accepted too."""
    if isinstance(mac, str) and "-" in mac and ":" not in mac:
        mac = mac.replace("-", ":")
    if not isinstance(mac, str) or not RAW_MAC_RE.match(mac):
        raise MalformedMacError(f"malformed MAC address: {mac!r}")
    return mac.upper()


@lru_cache(maxsize=1 << 16)
def _keyed_hash(salt: bytes, epoch: int, mac: str) -> str:
    return hmac.new(salt, f"{epoch}|{mac}".encode(), hashlib.sha256).hexdigest()


def anonymize(mac: str, salt: SaltConfig, at: float = 0.0) -> str:
    """HMAC-SHA256 of the normalized MAC under the salt of ``at``'s rotation epoch."""
    return _keyed_hash(salt.salt, salt.epoch(at), normalize_mac(mac))


@dataclass(frozen=True)
class RawProbeReport:
    mac: str
    sniffer_id: str
    timestamp: float
    sequence_number: int
    rssi: Optional[int] = None

    @classmethod
    def from_json(cls, doc: dict) -> "RawProbeReport":
        missing = [k for k in ("mac", "sniffer_id", "timestamp", "sequence_number") if k not in doc]
        if missing:
            raise IngestError("missing_field", ", ".join(missing))
        try:
            ts = parse_instant(doc["timestamp"])
        except ValueError as exc:
            raise IngestError("malformed_timestamp", str(exc)) from None
        seq = doc["sequence_number"]
        if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
            raise IngestError("malformed_sequence_number", repr(seq))
        rssi = doc.get("rssi")
        if rssi is not None and (not isinstance(rssi, int) or isinstance(rssi, bool)):
            raise IngestError("malformed_rssi", repr(rssi))
        return cls(mac=doc["mac"], sniffer_id=str(doc["sniffer_id"]), timestamp=ts,
                   sequence_number=seq, rssi=rssi)


def idempotency_key(*parts) -> str:
    return hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).hexdigest()


class Ingestor:
    """Turns raw reports into stored records for one deployment."""

    def __init__(self, topology: ZoneTopology, salt: SaltConfig, store,
                 window_seconds: float, epoch_origin: Optional[float] = None):
        salt.check_window(window_seconds)
        self.topology = topology
        self.salt = salt
        self.store = store
        self.window_seconds = window_seconds
        self.epoch_origin = epoch_origin
        self.finalized_through = -1  # advanced by the pipeline
        self.rejections: Counter[str] = Counter()
        self.accepted: Counter[str] = Counter()
        self.duplicates = 0
        self.late = 0
        self._lock = threading.Lock()
        self._sniffers = {z.sniffer_id: z.zone_id for z in topology.zones}
        self._cameras = {c for z in topology.zones for c in z.camera_ids}

    def _window_index(self, ts: float) -> int:
        with self._lock:
            if self.epoch_origin is None:
                self.epoch_origin = midnight_utc(ts)
            origin = self.epoch_origin
        try:
            return window_for(ts, self.window_seconds, origin).index
        except OutOfRangeError as exc:
            raise IngestError("before_epoch_origin", str(exc)) from None

    def _reject(self, err: IngestError):
        with self._lock:
            self.rejections[err.reason] += 1
        raise err

    def ingest_probe(self, report: RawProbeReport | dict) -> ProbeRecord:
        try:
            if isinstance(report, dict):
                report = RawProbeReport.from_json(report)
            zone_id = self._sniffers.get(report.sniffer_id)
            if zone_id is None:
                raise IngestError("unknown_sniffer", report.sniffer_id)
            try:
                device = anonymize(report.mac, self.salt, report.timestamp)
            except MalformedMacError:
                raise IngestError("malformed_mac") from None
            index = self._window_index(report.timestamp)
        except IngestError as err:
            self._reject(err)
        record = ProbeRecord(device=device, sniffer_id=report.sniffer_id,
                             timestamp=report.timestamp, sequence_number=report.sequence_number,
                             rssi=report.rssi)
        key = idempotency_key("probe", report.sniffer_id, device, to_millis(report.timestamp),
                              report.sequence_number)
        late = index <= self.finalized_through
        if self.store.add_probe(key, zone_id, index, record, late=late):
            with self._lock:
                self.accepted["probe"] += 1
                self.late += late
        else:
            with self._lock:
                self.duplicates += 1
        return record

    def ingest_camera_event(self, event: CameraEvent | dict) -> CameraEvent:
        try:
            if isinstance(event, dict):
                try:
                    event = CameraEvent.from_json(event)
                except ValueError as exc:
                    reason = "malformed_timestamp" if "timestamp" in str(exc) else "malformed_event"
                    raise IngestError(reason, str(exc)) from None
            if event.camera_id not in self._cameras:
                raise IngestError("unknown_camera", event.camera_id)
            index = self._window_index(event.timestamp)
        except IngestError as err:
            self._reject(err)
        if event.event_id is not None:
            key = idempotency_key("camera", event.camera_id, event.event_id)
        else:
            key = idempotency_key("camera", event.camera_id, event.direction.value,
                                  to_millis(event.timestamp), event.count)
        late = index <= self.finalized_through
        if self.store.add_camera_event(key, index, event, late=late):
            with self._lock:
                self.accepted["camera"] += 1
                self.late += late
        else:
            with self._lock:
                self.duplicates += 1
        return event

    def ingest(self, doc: dict):
        """Dispatch one JSON document by shape (probe reports carry ``mac``)."""
        if "mac" in doc:
            return self.ingest_probe(doc)
        if "camera_id" in doc:
            return self.ingest_camera_event(doc)
        self._reject(IngestError("unknown_record_type"))


# ---------------------------------------------------------------------------
# sources
# ---------------------------------------------------------------------------

class LogFormatError(ValueError):
    def __init__(self, path, lineno: int, detail: str):
        self.path, self.lineno = str(path), lineno
        super().__init__(f"{path}:{lineno}: {detail}")


def read_ndjson(path: str | Path, strict: bool = True,
                skipped: Optional[list] = None) -> Iterator[dict]:
    """Yield JSON objects from a newline-delimited file.

    Corrupt lines abort with the line number in strict mode; otherwise they
    are skipped and their numbers appended to ``skipped``.
    """
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                if not isinstance(doc, dict):
                    raise ValueError("record is not a JSON object")
            except ValueError as exc:
                if strict:
                    raise LogFormatError(path, lineno, str(exc)) from None
                if skipped is not None:
                    skipped.append(lineno)
                log.warning("%s:%d skipped corrupt line", path, lineno)
                continue
            yield doc


class FileTailSource:
    """Polls a newline-delimited JSON file for records appended since the last poll."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._offset = 0

    def poll(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path) as fh:
            fh.seek(self._offset)
            while True:
                line = fh.readline()
                if not line or not line.endswith("\n"):
                    break
                self._offset = fh.tell()
                if line.strip():
                    try:
                        out.append(json.loads(line))
                    except ValueError:
                        log.warning("%s: skipped corrupt line", self.path)
        return out


def dump_ndjson(path: str | Path, docs) -> None:
    with open(path, "w") as fh:
        for doc in docs:
            fh.write(json.dumps(doc, separators=(",", ":")) + "\n")


__all__ = [
    "SaltConfig", "RawProbeReport", "Ingestor", "IngestError", "MalformedMacError",
    "anonymize", "normalize_mac", "read_ndjson", "FileTailSource", "LogFormatError",
    "dump_ndjson", "format_instant",
]
