"""A thin NGSI-10 style context broker for crowd estimates.

Supports context update, query, subscription and notification. Documents
use the ``entityId`` / ``domainMetadata`` / ``attributes`` layout with the
``nle:`` vocabulary for Wi-Fi sniffer entities and their crowd estimation
attribute.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
import urllib.error
import urllib.request
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import urlparse

from .core import format_instant, parse_instant, to_millis

log = logging.getLogger(__name__)

ENTITY_TYPE = "nle:WiFiSniffer"
ATTRIBUTE_NAME = "CrowdEstimation"
ATTRIBUTE_TYPE = "nle:CrowdEstimation"
GEO = "nle:SimpleGeolocation"


class BrokerError(ValueError):
    """Rejected request; maps to an HTTP 400-class response."""

    def __init__(self, reason: str, status: int = 400):
        self.reason = reason
        self.status = status
        super().__init__(reason)


@dataclass(frozen=True)
class Metadata:
    name: str
    type: str
    value: object

    def to_json(self) -> dict:
        return {"name": self.name, "type": self.type, "value": self.value}


@dataclass(frozen=True)
class CrowdEstimationAttribute:
    context_value: int
    start: float
    end: float
    extra: tuple[Metadata, ...] = ()  # e.g. unrounded value, fallback flag
    name: str = ATTRIBUTE_NAME
    type: str = ATTRIBUTE_TYPE

    def to_json(self) -> dict:
        md = [{"name": "StartTime", "type": "DateTime", "value": format_instant(self.start)},
              {"name": "EndTime", "type": "DateTime", "value": format_instant(self.end)}]
        md += [m.to_json() for m in self.extra]
        return {"name": self.name, "type": self.type, "contextValue": self.context_value,
                "metadata": md}


@dataclass(frozen=True)
class ContextEntity:
    id: str
    attribute: CrowdEstimationAttribute
    mac_address: str = ""
    latitude: float = 0.0
    longitude: float = 0.0
    type: str = ENTITY_TYPE

    def to_json(self) -> dict:
        return {
            "entityId": {"id": self.id, "type": self.type, "isPattern": False},
            "domainMetadata": [
                {"name": "MacAddress", "type": "string", "value": self.mac_address},
                {"name": GEO, "type": GEO,
                 "value": {"latitude": self.latitude, "longitude": self.longitude}},
            ],
            "attributes": [self.attribute.to_json()],
        }

    @classmethod
    def from_json(cls, doc: dict, window_seconds: Optional[float] = None) -> "ContextEntity":
        try:
            eid = doc["entityId"]
            ident, etype = str(eid["id"]), str(eid["type"])
            dom = {m["name"]: m for m in doc.get("domainMetadata", [])}
            mac = str(dom.get("MacAddress", {}).get("value", ""))
            geo = dom.get(GEO, {}).get("value", {}) or {}
            attrs = [a for a in doc["attributes"] if a.get("name") == ATTRIBUTE_NAME]
            if len(attrs) != 1:
                raise BrokerError(f"entity must carry exactly one {ATTRIBUTE_NAME} attribute")
            attr = attrs[0]
            if attr.get("type") != ATTRIBUTE_TYPE:
                raise BrokerError(f"attribute type must be {ATTRIBUTE_TYPE}")
            value = attr["contextValue"]
            meta = {m["name"]: m for m in attr.get("metadata", [])}
            start = parse_instant(meta["StartTime"]["value"])
            end = parse_instant(meta["EndTime"]["value"])
            extra = tuple(Metadata(m["name"], m.get("type", ""), m.get("value"))
                          for m in attr.get("metadata", [])
                          if m["name"] not in ("StartTime", "EndTime"))
        except BrokerError:
            raise
        except (KeyError, TypeError, AttributeError) as exc:
            raise BrokerError(f"malformed entity: missing {exc}") from None
        except ValueError as exc:
            raise BrokerError(f"malformed entity: {exc}") from None
        if etype != ENTITY_TYPE:
            raise BrokerError(f"entity type must be {ENTITY_TYPE}")
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise BrokerError("contextValue must be a non-negative integer")
        if not start < end:
            raise BrokerError("StartTime must precede EndTime")
        if window_seconds is not None and to_millis(end - start) != to_millis(window_seconds):
            raise BrokerError("EndTime - StartTime must equal the window duration")
        try:
            lat, lon = float(geo.get("latitude", 0.0)), float(geo.get("longitude", 0.0))
        except (TypeError, ValueError):
            raise BrokerError("malformed geolocation") from None
        return cls(id=ident, type=etype, mac_address=mac, latitude=lat, longitude=lon,
                   attribute=CrowdEstimationAttribute(context_value=value, start=start,
                                                      end=end, extra=extra))


@dataclass(frozen=True)
class Subscription:
    reference_url: str
    entity_id: Optional[str] = None
    entity_type: Optional[str] = None
    expires: Optional[float] = None
    subscription_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def __post_init__(self):
        u = urlparse(self.reference_url)
        if u.scheme not in ("http", "https") or not u.netloc:
            raise BrokerError(f"invalid reference URL: {self.reference_url!r}")
        if self.entity_id is None and self.entity_type is None:
            raise BrokerError("subscription needs an entity id or type")

    def matches(self, entity: ContextEntity) -> bool:
        if self.entity_id is not None and self.entity_id != entity.id:
            return False
        if self.entity_type is not None and self.entity_type != entity.type:
            return False
        return True

    def expired(self, now: float) -> bool:
        return self.expires is not None and now >= self.expires

    def to_json(self) -> dict:
        return {"subscriptionId": self.subscription_id, "reference": self.reference_url,
                "entityId": self.entity_id, "entityType": self.entity_type,
                "expires": None if self.expires is None else format_instant(self.expires)}

    @classmethod
    def from_json(cls, doc: dict) -> "Subscription":
        exp = doc.get("expires")
        return cls(reference_url=doc["reference"], entity_id=doc.get("entityId"),
                   entity_type=doc.get("entityType"),
                   expires=None if exp is None else parse_instant(exp),
                   subscription_id=doc["subscriptionId"])


def http_post_json(url: str, payload: dict, timeout: float = 5.0) -> int:
    body = json.dumps(payload).encode()
    req = urllib.request.Request(url, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.status


@dataclass
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0  # doubles after each failed attempt


class _SubscriberWorker:
    """Delivers one subscription's notifications in order on its own thread."""

    def __init__(self, broker: "ThinBroker", sub: Subscription):
        self.broker = broker
        self.sub = sub
        self.queue: queue.Queue = queue.Queue()
        self.thread = threading.Thread(target=self._run, name=f"notify-{sub.subscription_id[:8]}",
                                       daemon=True)
        self.thread.start()

    def _run(self):
        while True:
            payload = self.queue.get()
            if payload is None:
                self.queue.task_done()
                return
            try:
                self.broker._deliver(self.sub, payload)
            finally:
                self.queue.task_done()


class ThinBroker:
    """Latest-value map, value history, and subscriptions with async notification.

    With ``store_path`` set, subscriptions and the update history are
    persisted there and reloaded on construction.
    """

    def __init__(self, store_path: str | Path | None = None, *,
                 window_seconds: Optional[float] = None,
                 retry: RetryPolicy | None = None,
                 post: Callable[[str, dict], int] = http_post_json,
                 clock: Callable[[], float] = time.time):
        self.path = Path(store_path) if store_path is not None else None
        self.window_seconds = window_seconds
        self.retry = retry or RetryPolicy()
        self.post = post
        self.clock = clock
        self._latest: dict[str, ContextEntity] = {}
        self._history: dict[str, list[ContextEntity]] = {}
        self._subs: dict[str, Subscription] = {}
        self._workers: dict[str, _SubscriberWorker] = {}
        self._lock = threading.RLock()
        self.history_count = 0
        self.delivered = 0
        self.notification_failures = 0
        self.delivery_log: list[dict] = []
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            self._load()

    # -- persistence ---------------------------------------------------------

    def _load(self):
        subs = self.path / "subscriptions.json"
        if subs.exists():
            for doc in json.loads(subs.read_text()):
                s = Subscription.from_json(doc)
                self._subs[s.subscription_id] = s
        hist = self.path / "history.jsonl"
        if hist.exists():
            with open(hist) as fh:
                for line in fh:
                    if line.strip():
                        e = ContextEntity.from_json(json.loads(line))
                        self._latest[e.id] = e
                        self._history.setdefault(e.id, []).append(e)
                        self.history_count += 1

    def _save_subscriptions(self):
        if self.path is None:
            return
        tmp = self.path / "subscriptions.json.tmp"
        tmp.write_text(json.dumps([s.to_json() for s in self._subs.values()], indent=1))
        tmp.replace(self.path / "subscriptions.json")

    def _append_history(self, doc: dict):
        if self.path is None:
            return
        with open(self.path / "history.jsonl", "a") as fh:
            fh.write(json.dumps(doc, separators=(",", ":")) + "\n")

    # -- the four thin-broker functions ------------------------------------

    def context_update(self, entity: ContextEntity | dict) -> dict:
        if isinstance(entity, dict):
            entity = ContextEntity.from_json(entity, self.window_seconds)
        elif self.window_seconds is not None:
            ContextEntity.from_json(entity.to_json(), self.window_seconds)
        doc = entity.to_json()
        with self._lock:
            self._latest[entity.id] = entity
            self._history.setdefault(entity.id, []).append(entity)
            self._append_history(doc)
            self.history_count += 1
            targets = self._matching(entity)
            for sub in targets:
                self._worker(sub).queue.put(doc)
        return {"code": 200, "reasonPhrase": "OK", "notified": len(targets)}

    def context_query(self, entity_id: Optional[str] = None,
                      entity_type: Optional[str] = None) -> list[ContextEntity]:
        with self._lock:
            found = [e for e in self._latest.values()
                     if (entity_id is None or e.id == entity_id)
                     and (entity_type is None or e.type == entity_type)]
        return sorted(found, key=lambda e: e.id)

    def history(self, entity_id: str) -> list[ContextEntity]:
        """Every update accepted for ``entity_id``, oldest first."""
        with self._lock:
            return list(self._history.get(entity_id, ()))

    def context_subscribe(self, subscription: Subscription) -> str:
        with self._lock:
            self._subs[subscription.subscription_id] = subscription
            self._save_subscriptions()
        return subscription.subscription_id

    def unsubscribe(self, subscription_id: str) -> bool:
        with self._lock:
            sub = self._subs.pop(subscription_id, None)
            worker = self._workers.pop(subscription_id, None)
            self._save_subscriptions()
        if worker is not None:
            worker.queue.put(None)
        return sub is not None

    def subscriptions(self) -> list[Subscription]:
        with self._lock:
            self._purge_expired()
            return list(self._subs.values())

    # -- notification ------------------------------------------------------

    def _purge_expired(self):
        now = self.clock()
        stale = [sid for sid, s in self._subs.items() if s.expired(now)]
        for sid in stale:
            log.info("subscription %s expired", sid)
            self._subs.pop(sid)
            worker = self._workers.pop(sid, None)
            if worker is not None:
                worker.queue.put(None)
        if stale:
            self._save_subscriptions()

    def _matching(self, entity: ContextEntity) -> list[Subscription]:
        self._purge_expired()
        return [s for s in self._subs.values() if s.matches(entity)]

    def _worker(self, sub: Subscription) -> _SubscriberWorker:
        w = self._workers.get(sub.subscription_id)
        if w is None:
            w = self._workers[sub.subscription_id] = _SubscriberWorker(self, sub)
        return w

    def notification_payload(self, sub: Subscription, entity_doc: dict) -> dict:
        return {"subscriptionId": sub.subscription_id, "originator": "crowdcal",
                "contextResponses": [{"contextElement": entity_doc,
                                      "statusCode": {"code": 200, "reasonPhrase": "OK"}}]}

    def context_notify(self, sub: Subscription, entity: ContextEntity | dict) -> bool:
        """Deliver synchronously with retries; True on success."""
        doc = entity.to_json() if isinstance(entity, ContextEntity) else entity
        return self._deliver(sub, doc)

    def _deliver(self, sub: Subscription, entity_doc: dict) -> bool:
        payload = self.notification_payload(sub, entity_doc)
        delay = self.retry.base_delay
        for attempt in range(1, self.retry.attempts + 1):
            try:
                status = self.post(sub.reference_url, payload)
                if status is None or 200 <= status < 300:
                    with self._lock:
                        self.delivered += 1
                        self.delivery_log.append(payload)
                    return True
                err = f"HTTP {status}"
            except (OSError, urllib.error.URLError) as exc:
                err = str(exc)
            log.warning("notification to %s failed (attempt %d/%d): %s",
                        sub.reference_url, attempt, self.retry.attempts, err)
            if attempt < self.retry.attempts:
                time.sleep(delay)
                delay *= 2
        with self._lock:
            self.notification_failures += 1
        log.error("dropping notification for %s to %s", entity_doc["entityId"]["id"],
                  sub.reference_url)
        return False

    def flush(self, timeout: float = 30.0) -> None:
        """Block until every queued notification has been attempted."""
        deadline = time.monotonic() + timeout
        with self._lock:
            workers = list(self._workers.values())
        for w in workers:
            while w.queue.unfinished_tasks:
                if time.monotonic() > deadline:
                    raise TimeoutError("notifications still pending")
                time.sleep(0.005)

    def close(self) -> None:
        with self._lock:
            workers = list(self._workers.values())
            self._workers.clear()
        for w in workers:
            w.queue.put(None)


# ---------------------------------------------------------------------------
# NGSI-10 request handling (transport independent)
# ---------------------------------------------------------------------------

def _status(code: int = 200, reason: str = "OK") -> dict:
    return {"code": code, "reasonPhrase": reason}


def _selector(doc: dict) -> tuple[Optional[str], Optional[str]]:
    ents = doc.get("entities") or [{}]
    ent = ents[0]
    if ent.get("isPattern") or "id" not in ent:
        return None, ent.get("type")
    return ent["id"], ent.get("type")


def handle_ngsi(broker: ThinBroker, path: str, body: dict) -> tuple[int, dict]:
    """Route one NGSI-10 request; returns (HTTP status, JSON body)."""
    try:
        if path == "/ngsi10/updateContext":
            elements = body.get("contextElements")
            if not isinstance(elements, list) or not elements:
                raise BrokerError("contextElements must be a non-empty list")
            entities = [ContextEntity.from_json(e, broker.window_seconds) for e in elements]
            for e in entities:
                broker.context_update(e)
            return 200, {"contextResponses": [{"contextElement": e.to_json(),
                                               "statusCode": _status()} for e in entities]}
        if path == "/ngsi10/queryContext":
            eid, etype = _selector(body)
            found = broker.context_query(eid, etype)
            return 200, {"contextResponses": [{"contextElement": e.to_json(),
                                               "statusCode": _status()} for e in found]}
        if path == "/ngsi10/subscribeContext":
            eid, etype = _selector(body)
            if "reference" not in body:
                raise BrokerError("missing reference URL")
            exp = body.get("expires")
            try:
                expires = None if exp is None else parse_instant(exp)
            except ValueError as exc:
                raise BrokerError(str(exc)) from None
            sid = broker.context_subscribe(Subscription(reference_url=body["reference"],
                                                        entity_id=eid, entity_type=etype,
                                                        expires=expires))
            return 200, {"subscribeResponse": {"subscriptionId": sid}}
        if path == "/ngsi10/unsubscribeContext":
            sid = body.get("subscriptionId")
            if not broker.unsubscribe(str(sid)):
                return 404, {"statusCode": _status(404, "subscription not found"),
                             "subscriptionId": sid}
            return 200, {"statusCode": _status(), "subscriptionId": sid}
    except BrokerError as exc:
        return exc.status, {"statusCode": _status(exc.status, exc.reason)}
    return 404, {"statusCode": _status(404, f"no such operation: {path}")}


class BrokerClient:
    """Publishes updates to a remote broker over HTTP."""

    def __init__(self, endpoint: str, post: Callable[[str, dict], int] = http_post_json):
        self.endpoint = endpoint.rstrip("/")
        self.post = post

    def context_update(self, entity: ContextEntity) -> dict:
        status = self.post(self.endpoint + "/ngsi10/updateContext",
                           {"contextElements": [entity.to_json()], "updateAction": "UPDATE"})
        if status is not None and not 200 <= status < 300:
            raise BrokerError(f"broker answered HTTP {status}", status)
        return {"code": status}
