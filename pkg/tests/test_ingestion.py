import json

import pytest
from hypothesis import given, strategies as st

from crowdcal.ingestion import (
    FileTailSource, IngestError, Ingestor, LogFormatError, MalformedMacError, SaltConfig,
    anonymize, normalize_mac, read_ndjson,
)
from crowdcal.store import Store

T0 = "2024-01-01T08:00:01.250Z"


def report(**kw):
    doc = {"sniffer_id": "sniffer-M2", "mac": "a4:5e:60:d1:22:3b", "timestamp": T0,
           "sequence_number": 17, "rssi": -61}
    doc.update(kw)
    return doc


@pytest.fixture
def ingestor(topology, salt):
    return Ingestor(topology, salt, Store(), 900.0, epoch_origin=1_704_067_200.0)


def test_anonymize_is_deterministic_and_salt_sensitive(salt):
    a = anonymize("A4:5E:60:D1:22:3B", salt)
    assert a == anonymize("a4-5e-60-d1-22-3b", salt)
    assert len(a) == 64 and a == a.lower()
    assert a != anonymize("A4:5E:60:D1:22:3B", SaltConfig(b"\x01" * 32))


@pytest.mark.parametrize("bad", ["ZZ:00:11:22:33:44", "A4:5E:60:D1:22", "", "A4:5E:60:D1:22:3B:00"])
def test_malformed_mac(bad, salt):
    with pytest.raises(MalformedMacError):
        anonymize(bad, salt)


@given(st.binary(min_size=6, max_size=6))
def test_normalize_accepts_common_spellings(raw):
    colon = ":".join(f"{b:02x}" for b in raw)
    assert normalize_mac(colon) == normalize_mac(colon.upper().replace(":", "-")) == colon.upper()


def test_salt_rotation_changes_ids_across_epochs():
    s = SaltConfig(b"k" * 32, rotation_period=86400.0)
    mac = "A4:5E:60:D1:22:3B"
    assert anonymize(mac, s, 10.0) == anonymize(mac, s, 86399.0)
    assert anonymize(mac, s, 10.0) != anonymize(mac, s, 86400.0)


def test_salt_must_be_long_enough():
    with pytest.raises(ValueError):
        SaltConfig(b"short")


def test_valid_report_stored_under_zone_and_window(ingestor):
    rec = ingestor.ingest_probe(report())
    stored = ingestor.store.probes("M2", 32)
    assert stored == [rec]
    assert "a4:5e" not in json.dumps(rec.to_json()).lower()


def test_unregistered_sniffer_rejected(ingestor):
    with pytest.raises(IngestError) as info:
        ingestor.ingest_probe(report(sniffer_id="X9"))
    assert info.value.reason == "unknown_sniffer"
    assert ingestor.rejections["unknown_sniffer"] == 1


@pytest.mark.parametrize("field,value,reason", [
    ("mac", "nonsense", "malformed_mac"),
    ("timestamp", "2024-01-01T08:00:00", "malformed_timestamp"),
    ("sequence_number", "x", "malformed_sequence_number"),
    ("rssi", "loud", "malformed_rssi"),
])
def test_rejection_reasons(ingestor, field, value, reason):
    with pytest.raises(IngestError) as info:
        ingestor.ingest_probe(report(**{field: value}))
    assert info.value.reason == reason


def test_missing_field(ingestor):
    doc = report()
    del doc["sequence_number"]
    with pytest.raises(IngestError, match="missing_field"):
        ingestor.ingest_probe(doc)


def test_duplicates_collapse_to_one_record(ingestor):
    for _ in range(10_000):
        ingestor.ingest_probe(report())
    assert ingestor.store.probe_count() == 1
    assert ingestor.duplicates == 9_999


def test_before_origin_rejected(ingestor):
    with pytest.raises(IngestError, match="before_epoch_origin"):
        ingestor.ingest_probe(report(timestamp="2023-12-31T23:59:59Z"))


def test_origin_defaults_to_first_midnight(topology, salt):
    ing = Ingestor(topology, salt, Store(), 900.0)
    ing.ingest_probe(report())
    assert ing.epoch_origin == 1_704_067_200.0


def test_camera_event_stored_and_deduplicated(ingestor):
    doc = {"camera_id": "C103", "direction": "MoveIn", "timestamp": T0, "event_id": "e1"}
    ingestor.ingest_camera_event(doc)
    ingestor.ingest_camera_event(doc)
    assert len(ingestor.store.camera_events(32)) == 1


def test_camera_event_rejections(ingestor):
    with pytest.raises(IngestError, match="malformed_event"):
        ingestor.ingest_camera_event({"camera_id": "C103", "direction": "MoveIn",
                                      "timestamp": T0, "count": 0})
    with pytest.raises(IngestError, match="unknown_camera"):
        ingestor.ingest_camera_event({"camera_id": "C0", "direction": "MoveIn", "timestamp": T0})


def test_late_records_are_flagged(ingestor):
    ingestor.finalized_through = 40
    ingestor.ingest_probe(report())
    assert ingestor.late == 1


def test_dispatch_by_shape(ingestor):
    ingestor.ingest(report())
    ingestor.ingest({"camera_id": "C104", "direction": "MoveOut", "timestamp": T0})
    with pytest.raises(IngestError, match="unknown_record_type"):
        ingestor.ingest({"hello": 1})
    assert dict(ingestor.accepted) == {"probe": 1, "camera": 1}


def test_read_ndjson_strict_and_lenient(tmp_path):
    p = tmp_path / "log.jsonl"
    p.write_text('{"a": 1}\n\nnot json\n[1]\n{"b": 2}\n')
    with pytest.raises(LogFormatError) as info:
        list(read_ndjson(p))
    assert info.value.lineno == 3
    skipped = []
    assert list(read_ndjson(p, strict=False, skipped=skipped)) == [{"a": 1}, {"b": 2}]
    assert skipped == [3, 4]


def test_file_tail_source_only_returns_complete_new_lines(tmp_path):
    p = tmp_path / "tail.jsonl"
    src = FileTailSource(p)
    assert src.poll() == []
    p.write_text('{"n": 1}\n{"n": 2')
    assert src.poll() == [{"n": 1}]
    with open(p, "a") as fh:
        fh.write('}\n{"n": 3}\n')
    assert src.poll() == [{"n": 2}, {"n": 3}]
    assert src.poll() == []
