"""Window finalization loop: count, calibrate, persist, publish.

Live and replay runs share :meth:`Pipeline.advance`; only the clock differs.
A window is finalized once its end plus the grace period has passed, in
strictly increasing order, exactly once.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Optional

from .broker import BrokerClient, ContextEntity, CrowdEstimationAttribute, Metadata, ThinBroker
from .calibration import DEFAULT_Q, Algorithm, CalibrationState, ZoneEstimate, update_and_calibrate
from .core import (
    DEFAULT_WINDOW_SECONDS, WindowMeasurement, ZoneTopology, format_instant, midnight_utc,
    parse_instant, validate_topology, window_at,
)
from .counting import camera_total, count_devices
from .ingestion import IngestError, Ingestor, LogFormatError, SaltConfig, read_ndjson
from .store import Store, StoreUnavailable

log = logging.getLogger(__name__)

ESTIMATE_COLUMNS = ("algorithm", "window_index", "window_start", "zone_id", "is_choke_point",
                    "raw_count", "camera_total", "calibrated", "calibrated_rounded",
                    "coefficient", "fallback")
COEFFICIENT_COLUMNS = ("algorithm", "window_index", "window_start", "coefficient",
                       "training_size", "fallback")


# config-file keys that belong to the CLI rather than the pipeline
CONFIG_SECTIONS = ("topology", "simulate", "replay", "evaluate", "export", "serve")


class WindowOrderError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    algorithm: str = "proportional"
    q: int = DEFAULT_Q
    # extra (algorithm, q) calibrations computed alongside the published one
    compare: tuple = ()
    finalization_grace: float = 30.0
    broker_endpoint: Optional[str] = None
    store_path: Optional[str] = None
    epoch_origin: Optional[float] = None
    salt_hex: Optional[str] = None
    salt_rotation: Optional[float] = None
    poll_interval_ms: int = 100

    def __post_init__(self):
        if not self.window_seconds > 0:
            raise ValueError("window_seconds must be positive")
        if self.finalization_grace < 0:
            raise ValueError("finalization_grace must be non-negative")
        Algorithm(self.algorithm)
        if self.q < 1:
            raise ValueError("q must be positive")
        self.compare = tuple((str(a), int(q)) for a, q in self.compare)
        if isinstance(self.epoch_origin, str):
            self.epoch_origin = parse_instant(self.epoch_origin)

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path | None = None, env=os.environ) -> "PipelineConfig":
        """Config file values, overridden by SALT / WINDOW_SECONDS / POLL_INTERVAL_MS / ALGORITHM / Q."""
        doc = json.loads(Path(path).read_text()) if path else {}
        for key in CONFIG_SECTIONS:
            doc.pop(key, None)
        if "SALT" in env:
            doc["salt_hex"] = env["SALT"]
        if "WINDOW_SECONDS" in env:
            doc["window_seconds"] = float(env["WINDOW_SECONDS"])
        if "POLL_INTERVAL_MS" in env:
            doc["poll_interval_ms"] = int(env["POLL_INTERVAL_MS"])
        if "ALGORITHM" in env:
            doc["algorithm"] = env["ALGORITHM"]
        if "Q" in env:
            doc["q"] = int(env["Q"])
        return cls.from_json(doc)

    def salt(self) -> SaltConfig:
        if self.salt_hex:
            return SaltConfig.from_hex(self.salt_hex, self.salt_rotation)
        log.warning("no SALT configured; using a random per-process salt")
        return SaltConfig(os.urandom(32), self.salt_rotation)


def entity_for(estimate: ZoneEstimate, zone) -> ContextEntity:
    attr = CrowdEstimationAttribute(
        context_value=estimate.rounded, start=estimate.window.start, end=estimate.window.end,
        extra=(Metadata("calibratedValue", "float", estimate.calibrated),
               Metadata("fallback", "boolean", estimate.fallback),
               Metadata("algorithm", "string", estimate.algorithm)))
    return ContextEntity(id=zone.sniffer_id, attribute=attr, mac_address=zone.mac_address,
                         latitude=zone.latitude, longitude=zone.longitude)


class Pipeline:
    def __init__(self, topology: ZoneTopology, config: PipelineConfig | None = None, *,
                 store: Store | None = None, broker=None, salt: SaltConfig | None = None):
        self.topology = validate_topology(topology)
        self.config = config or PipelineConfig()
        cfg = self.config
        root = Path(cfg.store_path) if cfg.store_path else None
        self.store = store if store is not None else Store(root / "records" if root else None)
        if broker is None:
            if cfg.broker_endpoint:
                broker = BrokerClient(cfg.broker_endpoint)
            else:
                broker = ThinBroker(root / "broker" if root else None,
                                    window_seconds=cfg.window_seconds)
        self.broker = broker
        self.ingestor = Ingestor(topology, salt or cfg.salt(), self.store, cfg.window_seconds,
                                 cfg.epoch_origin)
        self.states = [CalibrationState(Algorithm(cfg.algorithm), cfg.q)]
        self.states += [CalibrationState(Algorithm(a), q) for a, q in cfg.compare]
        labels = [s.label for s in self.states]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate calibration variants: {labels}")
        self.next_window = 0
        self.publish_failures = 0
        self._lock = threading.Lock()

    @property
    def epoch_origin(self) -> Optional[float]:
        return self.ingestor.epoch_origin

    # -- finalization --------------------------------------------------------

    def measurements(self, index: int) -> tuple[WindowMeasurement, list[WindowMeasurement]]:
        window = window_at(index, self.config.window_seconds, self.epoch_origin)
        choke, *others = self.topology.ordered()

        def d(zone):
            return count_devices(self.store.probes(zone.zone_id, index))

        events = self.store.camera_events(index)
        m0 = WindowMeasurement(window, choke.zone_id, d(choke), camera_total(events, window))
        return m0, [WindowMeasurement(window, z.zone_id, d(z)) for z in others]

    def finalize_window(self, index: Optional[int] = None) -> list[ZoneEstimate]:
        """Finalize the next window (``index`` must equal it when given)."""
        with self._lock:
            if self.epoch_origin is None:
                raise WindowOrderError("no epoch origin yet; nothing has been ingested")
            if index is None:
                index = self.next_window
            if index < self.next_window:
                raise WindowOrderError(f"window {index} already finalized")
            if index > self.next_window:
                raise WindowOrderError(f"window {self.next_window} must be finalized before {index}")
            choke, others = self.measurements(index)
            new_states, results = [], []
            for state in self.states:
                st, est = update_and_calibrate(state, choke, others)
                new_states.append(st)
                results.append((st, est))
            rows, coef_rows = [], []
            for st, est in results:
                for e in est:
                    rows.append(self._row(e, choke))
                coef_rows.append({"algorithm": st.label, "window_index": index,
                                  "window_start": format_instant(choke.window.start),
                                  "coefficient": None if st.coefficient is None else float(st.coefficient),
                                  "training_size": len(st.training),
                                  "fallback": st.coefficient is None})
            self.store.add_estimates(rows)
            for r in coef_rows:
                self.store.add_coefficient(r)
            self.store.mark_finalized(index)
            # commit only after everything is persisted
            self.states = new_states
            self.next_window = index + 1
            self.ingestor.finalized_through = index
            primary = results[0][1]
        self._publish(primary)
        return primary

    def _row(self, e: ZoneEstimate, choke: WindowMeasurement) -> dict:
        return {"algorithm": e.algorithm, "window_index": e.window.index,
                "window_start": format_instant(e.window.start), "zone_id": e.zone_id,
                "is_choke_point": e.is_choke_point, "raw_count": e.raw_count,
                "camera_total": choke.camera_total if e.is_choke_point else None,
                "calibrated": e.calibrated, "calibrated_rounded": e.rounded,
                "coefficient": e.coefficient_used, "fallback": e.fallback}

    def _publish(self, estimates: list[ZoneEstimate]) -> None:
        for e in estimates:
            zone = self.topology.zone(e.zone_id)
            try:
                self.broker.context_update(entity_for(e, zone))
            except Exception as exc:  # broker trouble must not stall finalization
                self.publish_failures += 1
                log.error("publishing %s window %d failed: %s", e.zone_id, e.window.index, exc)

    def advance(self, now: float, retry_delay: float = 1.0, attempts: int = 5) -> int:
        """Finalize every pending window whose end + grace <= ``now``."""
        if self.epoch_origin is None:
            return 0
        done = 0
        while True:
            w = window_at(self.next_window, self.config.window_seconds, self.epoch_origin)
            if w.end + self.config.finalization_grace > now:
                return done
            for attempt in range(attempts):
                try:
                    self.finalize_window(w.index)
                    break
                except StoreUnavailable as exc:
                    log.error("window %d: persistence unavailable (%s), retrying", w.index, exc)
                    if attempt == attempts - 1:
                        raise
                    time.sleep(retry_delay * 2 ** attempt)
            done += 1

    # -- reporting -----------------------------------------------------------

    def metrics(self) -> dict:
        ing = self.ingestor
        return {"finalized_windows": len(self.store.finalized),
                "next_window": self.next_window,
                "accepted_records": dict(ing.accepted),
                "rejected_records": sum(ing.rejections.values()),
                "rejections_by_reason": dict(ing.rejections),
                "duplicate_records": ing.duplicates,
                "late_records": ing.late,
                "publish_failures": self.publish_failures,
                "notification_failures": getattr(self.broker, "notification_failures", 0)}

    def run_live(self, stop: threading.Event, sources: Iterable = (),
                 clock: Callable[[], float] = time.time) -> None:
        """Poll sources and finalize windows against ``clock`` until ``stop`` is set."""
        sources = list(sources)
        interval = self.config.poll_interval_ms / 1000.0
        while not stop.is_set():
            for src in sources:
                for doc in src.poll():
                    try:
                        self.ingestor.ingest(doc)
                    except IngestError as exc:
                        log.info("rejected record: %s", exc)
            try:
                self.advance(clock())
            except StoreUnavailable:
                log.exception("finalization stalled")
            stop.wait(interval)

    def recompute(self) -> "Pipeline":
        """Rebuild all estimates from stored records, including late ones, without publishing."""
        fresh = Pipeline(self.topology, self.config, store=_ReadOnlyView(self.store),
                         broker=_NullBroker(), salt=self.ingestor.salt)
        fresh.ingestor.epoch_origin = self.epoch_origin
        for _ in range(self.next_window):
            fresh.finalize_window()
        return fresh


class _NullBroker:
    def context_update(self, entity):
        return {"code": 200}


class _ReadOnlyView:
    """Serves another store's raw records while collecting derived rows in memory."""

    def __init__(self, source: Store):
        self._src = source
        self.estimates, self.coefficients, self.finalized = [], [], []

    def probes(self, zone_id, index):
        return self._src.probes(zone_id, index)

    def camera_events(self, index):
        return self._src.camera_events(index)

    def add_estimates(self, rows):
        self.estimates.extend(rows)

    def add_coefficient(self, row):
        self.coefficients.append(row)

    def mark_finalized(self, index):
        self.finalized.append(index)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass
class ReplayResult:
    pipeline: Pipeline
    estimates: list[dict]
    coefficients: list[dict]
    skipped_lines: list = field(default_factory=list)
    rejected: int = 0


def run_replay(probe_log: str | Path | None, camera_log: str | Path | None,
               topology: ZoneTopology, config: PipelineConfig | None = None, *,
               n_windows: Optional[int] = None, strict: bool = True,
               broker=None, salt: SaltConfig | None = None) -> ReplayResult:
    """Ingest both logs, then finalize windows with a virtual clock past the data.

    ``n_windows`` pins how many windows are finalized; otherwise replay runs
    through the last window holding any record.
    """
    config = config or PipelineConfig()
    skipped: list = []
    docs = []
    for path in (probe_log, camera_log):
        if path is None:
            continue
        lines: list = []
        docs.extend(read_ndjson(path, strict=strict, skipped=lines))
        skipped.extend((str(path), n) for n in lines)
    if config.epoch_origin is None and docs:
        stamps = []
        for d in docs:
            try:
                stamps.append(parse_instant(d["timestamp"]))
            except (KeyError, ValueError):
                continue
        if stamps:
            config = _with_origin(config, midnight_utc(min(stamps)))
    pipe = Pipeline(topology, config, broker=broker, salt=salt)
    rejected = 0
    for doc in docs:
        try:
            pipe.ingestor.ingest(doc)
        except IngestError:
            rejected += 1
    if pipe.epoch_origin is not None:
        last = n_windows - 1 if n_windows is not None else pipe.store.max_window_index()
        if last is not None and last >= 0:
            end = window_at(last, config.window_seconds, pipe.epoch_origin).end
            pipe.advance(end + config.finalization_grace)
    if hasattr(pipe.broker, "flush"):
        pipe.broker.flush()
    return ReplayResult(pipeline=pipe, estimates=list(pipe.store.estimates),
                        coefficients=list(pipe.store.coefficients), skipped_lines=skipped,
                        rejected=rejected)


def _with_origin(config: PipelineConfig, origin: float) -> PipelineConfig:
    doc = {f.name: getattr(config, f.name) for f in fields(config)}
    doc["epoch_origin"] = origin
    return PipelineConfig(**doc)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Iterable[dict], columns: tuple, path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_estimates_csv(path: str | Path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append({
                "algorithm": r["algorithm"], "window_index": int(r["window_index"]),
                "window_start": r["window_start"], "zone_id": r["zone_id"],
                "is_choke_point": r["is_choke_point"] == "true",
                "raw_count": int(r["raw_count"]),
                "camera_total": int(r["camera_total"]) if r.get("camera_total") else None,
                "calibrated": float(r["calibrated"]),
                "calibrated_rounded": int(r["calibrated_rounded"]),
                "coefficient": float(r["coefficient"]) if r["coefficient"] else None,
                "fallback": r["fallback"] == "true"})
    return out


__all__ = ["Pipeline", "PipelineConfig", "run_replay", "ReplayResult", "rows_to_csv",
           "read_estimates_csv", "ESTIMATE_COLUMNS", "COEFFICIENT_COLUMNS", "LogFormatError",
           "WindowOrderError", "entity_for"]
