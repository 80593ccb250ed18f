import random

import pytest
from hypothesis import given, strategies as st

from crowdcal.core import CameraEvent, Direction, ProbeRecord, window_for
from crowdcal.counting import ContractViolation, WindowProbeSet, camera_total, count_devices

W = window_for(900.0, 900.0, 0.0)


def probe(dev, t=1000.0, seq=0):
    return ProbeRecord(dev, "s1", t, seq)


def test_empty_window_counts_zero():
    assert count_devices([]) == 0


def test_duplicates_counted_once():
    assert count_devices([probe("A"), probe("A", seq=1), probe("B")]) == 2


def test_uniform_draws_from_137_devices():
    rng = random.Random(137)
    ids = [f"{i:064x}" for i in range(137)]
    probes = [probe(i) for i in ids] + [probe(rng.choice(ids)) for _ in range(5000 - 137)]
    rng.shuffle(probes)
    assert count_devices(probes) == len(set(ids)) == 137


@given(st.lists(st.sampled_from("abcdefgh"), max_size=60), st.randoms())
def test_count_is_permutation_invariant(devs, rnd):
    probes = [probe(d, seq=i) for i, d in enumerate(devs)]
    shuffled = probes[:]
    rnd.shuffle(shuffled)
    assert count_devices(probes) == count_devices(shuffled) == len(set(devs))


def test_checked_probe_set_rejects_foreign_probes():
    with pytest.raises(ContractViolation):
        WindowProbeSet.checked(W, "M1", [probe("A", t=1800.0)])
    with pytest.raises(ContractViolation):
        WindowProbeSet.checked(W, "M1", [probe("A")], sniffer_id="other")
    assert count_devices(WindowProbeSet.checked(W, "M1", [probe("A")], "s1")) == 1


def ev(direction, t=1000.0, cam="C0", count=1):
    return CameraEvent(cam, direction, t, count)


def test_camera_total_no_events():
    assert camera_total([], W) == 0


def test_camera_total_in_plus_out():
    events = [ev(Direction.MOVE_IN)] * 7 + [ev(Direction.MOVE_OUT)] * 4
    assert camera_total(events, W) == 11
    assert camera_total([ev(Direction.MOVE_IN)] * 3 + [ev(Direction.MOVE_OUT)] * 2, W) == 5


def test_cameras_merge_into_one_virtual_counter():
    per_camera = {f"C10{i}": [ev(Direction.MOVE_IN, cam=f"C10{i}", count=i + 1)] for i in range(3, 7)}
    merged = [e for evs in per_camera.values() for e in evs]
    assert camera_total(merged, W) == sum(camera_total(evs, W) for evs in per_camera.values())


def test_camera_event_outside_window_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        camera_total([ev(Direction.MOVE_IN, t=1800.0)], W)
