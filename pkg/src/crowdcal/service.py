"""Long-running HTTP front end: ingestion, health, metrics and the NGSI endpoints."""

from __future__ import annotations

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterable

from .broker import ThinBroker, handle_ngsi
from .ingestion import IngestError
from .pipeline import Pipeline

log = logging.getLogger(__name__)


class _Handler(BaseHTTPRequestHandler):
    server: "CrowdService"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s - " + fmt, self.address_string(), *args)

    def _reply(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self):
        n = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(n) if n else b""
        try:
            return json.loads(raw or b"null")
        except ValueError:
            return None

    def do_GET(self):
        svc = self.server
        if self.path == "/health":
            self._reply(200, {"status": "ok", "finalizer_alive": svc.finalizer_alive})
        elif self.path == "/metrics":
            self._reply(200, svc.pipeline.metrics())
        else:
            self._reply(404, {"error": "not_found"})

    def do_POST(self):
        svc = self.server
        body = self._body()
        if self.path.startswith("/ngsi10/"):
            broker = svc.pipeline.broker
            if not isinstance(broker, ThinBroker):
                self._reply(404, {"error": "broker is remote"})
                return
            if not isinstance(body, dict):
                self._reply(400, {"error": "malformed_json"})
                return
            status, doc = handle_ngsi(broker, self.path, body)
            self._reply(status, doc)
            return
        kind = {"/ingest/probe": "probe", "/ingest/camera": "camera"}.get(self.path)
        if kind is None:
            self._reply(404, {"error": "not_found"})
            return
        if not isinstance(body, dict):
            self._reply(400, {"error": "malformed_json", "detail": "body must be a JSON object"})
            return
        ing = svc.pipeline.ingestor
        try:
            if kind == "probe":
                ing.ingest_probe(body)
            else:
                ing.ingest_camera_event(body)
        except IngestError as exc:
            self._reply(400, {"error": exc.reason, "detail": exc.detail})
            return
        self._reply(HTTPStatus.ACCEPTED, {"status": "accepted"})


class CrowdService(ThreadingHTTPServer):
    """HTTP server plus the background finalization loop of one pipeline."""

    daemon_threads = True
    request_queue_size = 128

    def __init__(self, pipeline: Pipeline, address=("127.0.0.1", 8080), sources: Iterable = ()):
        super().__init__(address, _Handler)
        self.pipeline = pipeline
        self._stop = threading.Event()
        self._finalizer = threading.Thread(target=pipeline.run_live, args=(self._stop, sources),
                                           name="finalizer", daemon=True)

    @property
    def finalizer_alive(self) -> bool:
        return self._finalizer.is_alive()

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "CrowdService":
        self._finalizer.start()
        threading.Thread(target=self.serve_forever, name="http", daemon=True).start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self.shutdown()
        self.server_close()
        if self._finalizer.is_alive():
            self._finalizer.join(timeout=5)
        close = getattr(self.pipeline.broker, "close", None)
        if close:
            close()
        self.pipeline.store.close()
