import json
import urllib.error
import urllib.request

import pytest

from crowdcal.broker import ThinBroker
from crowdcal.pipeline import Pipeline, PipelineConfig
from crowdcal.service import CrowdService


@pytest.fixture
def service(topology, salt, tmp_path):
    pipe = Pipeline(topology, PipelineConfig(epoch_origin=1_704_067_200.0,
                                             store_path=str(tmp_path)),
                    broker=ThinBroker(window_seconds=900), salt=salt)
    svc = CrowdService(pipe, ("127.0.0.1", 0)).start()
    yield svc
    svc.stop()


def call(url, body=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, method="GET" if body is None else "POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


def test_health(service):
    status, body = call(service.url + "/health")
    assert status == 200 and body["status"] == "ok" and body["finalizer_alive"]


def test_ingest_probe_accept_and_reject(service):
    ok = {"sniffer_id": "sniffer-M2", "mac": "A4:5E:60:D1:22:3B",
          "timestamp": "2024-01-01T00:00:05Z", "sequence_number": 1}
    assert call(service.url + "/ingest/probe", ok)[0] == 202
    status, body = call(service.url + "/ingest/probe", dict(ok, sniffer_id="X9"))
    assert status == 400 and body["error"] == "unknown_sniffer"
    status, body = call(service.url + "/ingest/probe", dict(ok, mac="ZZ"))
    assert status == 400 and body["error"] == "malformed_mac"


def test_ingest_camera(service):
    ev = {"camera_id": "C103", "direction": "MoveIn", "timestamp": "2024-01-01T00:00:05Z"}
    assert call(service.url + "/ingest/camera", ev)[0] == 202
    status, body = call(service.url + "/ingest/camera", dict(ev, count=0))
    assert status == 400 and body["error"] == "malformed_event"


def test_metrics_and_live_finalization(service):
    status, m = call(service.url + "/metrics")
    assert status == 200
    # epoch origin is 2024-01-01, so the wall clock has long passed many windows
    assert m["finalized_windows"] > 0
    assert {"rejected_records", "notification_failures", "finalized_windows"} <= set(m)


def test_ngsi_endpoint_and_unknown_path(service):
    status, body = call(service.url + "/ngsi10/queryContext", {"entities": [{"id": "nobody"}]})
    assert status == 200 and body["contextResponses"] == []
    assert call(service.url + "/nope", {})[0] == 404
    assert call(service.url + "/nope")[0] == 404
