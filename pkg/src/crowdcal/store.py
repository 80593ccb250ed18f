"""Append-only persistence for ingested records and derived estimates.

Everything is held in memory for querying. When a directory is given, each
collection is also appended to a newline-delimited JSON file in it, in the
order the writes happened, so the same input sequence always produces the
same bytes on disk.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import defaultdict
from pathlib import Path
from typing import Callable, Optional

from .core import CameraEvent, ProbeRecord

log = logging.getLogger(__name__)

FILES = ("probes", "camera", "estimates", "coefficients", "finalized")


class StoreUnavailable(OSError):
    pass


def with_retry(fn: Callable, attempts: int = 5, base_delay: float = 0.05):
    """Call ``fn`` retrying OSError with exponential backoff; re-raise after the last attempt."""
    for i in range(attempts):
        try:
            return fn()
        except OSError as exc:
            if i == attempts - 1:
                raise StoreUnavailable(str(exc)) from exc
            log.warning("store write failed (%s), retrying", exc)
            time.sleep(base_delay * 2 ** i)


class Store:
    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._keys: set[str] = set()
        self._probes: dict[tuple[str, int], list[ProbeRecord]] = defaultdict(list)
        self._camera: dict[int, list[CameraEvent]] = defaultdict(list)
        self.late_keys: set[str] = set()
        self.estimates: list[dict] = []
        self.coefficients: list[dict] = []
        self.finalized: list[int] = []
        self._handles: dict = {}

    # -- raw records ---------------------------------------------------------

    def add_probe(self, key: str, zone_id: str, window_index: int, record: ProbeRecord,
                  late: bool = False) -> bool:
        """Store a probe once per idempotency key; returns False for a duplicate."""
        with self._lock:
            if key in self._keys:
                return False
            doc = record.to_json()
            doc.update(zone_id=zone_id, window_index=window_index, late=late)
            self._append("probes", doc)
            self._keys.add(key)
            self._probes[(zone_id, window_index)].append(record)
            if late:
                self.late_keys.add(key)
            return True

    def add_camera_event(self, key: str, window_index: int, event: CameraEvent,
                         late: bool = False) -> bool:
        with self._lock:
            if key in self._keys:
                return False
            doc = event.to_json()
            doc.update(window_index=window_index, late=late)
            self._append("camera", doc)
            self._keys.add(key)
            self._camera[window_index].append(event)
            if late:
                self.late_keys.add(key)
            return True

    def probes(self, zone_id: str, window_index: int) -> list[ProbeRecord]:
        with self._lock:
            return list(self._probes.get((zone_id, window_index), ()))

    def camera_events(self, window_index: int) -> list[CameraEvent]:
        with self._lock:
            return list(self._camera.get(window_index, ()))

    def probe_count(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._probes.values())

    def max_window_index(self) -> Optional[int]:
        with self._lock:
            idx = [w for _, w in self._probes] + list(self._camera)
            return max(idx) if idx else None

    # -- derived -------------------------------------------------------------

    def add_estimates(self, rows: list[dict]) -> None:
        with self._lock:
            for row in rows:
                self._append("estimates", row)
            self.estimates.extend(rows)

    def add_coefficient(self, row: dict) -> None:
        with self._lock:
            self._append("coefficients", row)
            self.coefficients.append(row)

    def mark_finalized(self, window_index: int) -> None:
        with self._lock:
            self._append("finalized", {"window_index": window_index})
            self.finalized.append(window_index)

    # -- io ------------------------------------------------------------------

    def _append(self, name: str, doc: dict) -> None:
        if self.path is None:
            return
        line = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

        def write():
            fh = self._handles.get(name)
            if fh is None:
                fh = self._handles[name] = open(self.path / f"{name}.jsonl", "a")
            try:
                fh.write(line)
                fh.flush()
            except OSError:
                self._handles.pop(name, None)
                raise

        with_retry(write)

    def close(self) -> None:
        with self._lock:
            for fh in self._handles.values():
                fh.close()
            self._handles.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
