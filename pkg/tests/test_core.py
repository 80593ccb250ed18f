import pytest
from hypothesis import given, strategies as st

from crowdcal.core import (
    CameraEvent, Direction, OutOfRangeError, TopologyError, Zone, ZoneTopology, check_device_id,
    format_instant, parse_instant, validate_topology, window_for,
)

ORIGIN = 1_704_067_200.0  # 2024-01-01T00:00:00Z


def test_window_at_origin_is_zero():
    w = window_for(ORIGIN, 900, ORIGIN)
    assert (w.index, w.start) == (0, ORIGIN)


def test_window_boundary_belongs_to_next_window():
    assert window_for(ORIGIN + 900, 900, ORIGIN).index == 1
    assert window_for(ORIGIN + 899.999, 900, ORIGIN).index == 0


def test_window_index_by_linear_scan():
    t = ORIGIN + 3723
    starts = [ORIGIN + 900 * k for k in range(10)]
    expected = max(k for k, s in enumerate(starts) if s <= t)
    assert window_for(t, 900, ORIGIN).index == expected == 4


def test_timestamp_before_origin_rejected():
    with pytest.raises(OutOfRangeError):
        window_for(ORIGIN - 0.001, 900, ORIGIN)


@given(st.integers(0, 10**10), st.sampled_from([60.0, 300.0, 900.0, 3600.0]))
def test_window_contains_its_timestamp(ms, duration):
    t = ORIGIN + ms / 1000
    w = window_for(t, duration, ORIGIN)
    assert w.contains(t)
    assert w.start <= t < w.end
    assert not w.contains(w.end)


@pytest.mark.parametrize("text", [
    "2024-01-01T08:15:00Z", "2024-01-01T08:15:00.000+00:00", "2024.01.01 08:15:00:000 Z",
    "2024-01-01T10:15:00+02:00",
])
def test_parse_instant_formats(text):
    assert parse_instant(text) == ORIGIN + 8 * 3600 + 900


@pytest.mark.parametrize("bad", ["2024-01-01T08:15:00", "yesterday", True, float("nan"), None])
def test_parse_instant_rejects(bad):
    with pytest.raises(ValueError):
        parse_instant(bad)


def test_format_instant_round_trip():
    t = ORIGIN + 12.345
    assert format_instant(t) == "2024-01-01T00:00:12.345+00:00"
    assert parse_instant(format_instant(t)) == t


def test_device_id_refuses_raw_mac():
    with pytest.raises(ValueError, match="raw MAC"):
        check_device_id("AA:BB:CC:DD:EE:FF")
    assert check_device_id("a" * 64)


def test_camera_event_count_must_be_positive():
    with pytest.raises(ValueError):
        CameraEvent("C0", Direction.MOVE_IN, ORIGIN, count=0)
    ev = CameraEvent.from_json({"camera_id": "C0", "direction": "MoveOut",
                                "timestamp": "2024-01-01T00:00:01Z"})
    assert ev.direction is Direction.MOVE_OUT and ev.count == 1


def _zones(n=5, choke=0, cams=("C0",)):
    return tuple(Zone(f"Z{i + 1}", f"sniffer-{i + 1}", 52.0, 4.0, i == choke,
                      cams if i == choke else ()) for i in range(n))


def test_five_zone_topology_is_valid():
    topo = validate_topology(ZoneTopology(_zones()))
    assert topo.choke.zone_id == "Z1"
    assert [z.zone_id for z in topo.ordered()][0] == "Z1"


def test_two_choke_points_rejected():
    zones = list(_zones())
    zones[3] = Zone("Z4", "sniffer-4", 52.0, 4.0, True, ("C9",))
    with pytest.raises(TopologyError, match="multiple choke points"):
        validate_topology(ZoneTopology(tuple(zones)))


def test_choke_without_camera_rejected():
    with pytest.raises(TopologyError, match="choke point lacks camera"):
        validate_topology(ZoneTopology(_zones(cams=())))


def test_topology_collects_every_violation():
    zones = (Zone("Z1", "s", 95.0, 0.0, False), Zone("Z1", "s", 0.0, 0.0, False, ("C1",)))
    with pytest.raises(TopologyError) as info:
        validate_topology(ZoneTopology(zones))
    text = " | ".join(info.value.violations)
    for fragment in ("no choke point", "geolocation", "duplicate zone_id", "duplicate sniffer_id",
                     "non-choke zone has cameras"):
        assert fragment in text


def test_topology_json_round_trip():
    topo = ZoneTopology(_zones())
    assert ZoneTopology.from_json(topo.to_json()) == topo
