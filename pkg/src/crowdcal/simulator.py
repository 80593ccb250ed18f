"""Seeded generator of pedestrian traffic, Wi-Fi probes and camera detections.

A base arrival stream (pedestrians per window, by hour of day) is shared by
all zones; each zone sees a thinned share of it. Every traversal lasts a
dwell time drawn from the transit speed. Pedestrians carrying a device emit
probes as a renewal process with gaps from ``probe_interval``; only probes
inside the dwell interval reach the zone's sniffer. Passers-by are devices
inside sniffer range that never enter the zone: they produce probes but no
ground truth and no camera events. The choke point's cameras detect each
true traversal with probability ``camera_accuracy`` and add false events at
``camera_false_rate`` per window.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    DEFAULT_WINDOW_SECONDS, Zone, ZoneTopology, format_instant, validate_topology, window_at,
)

DWELL = {"stroll": (120.0, 600.0), "commute": (10.0, 30.0)}
MONDAY = datetime(2024, 1, 1, tzinfo=timezone.utc).timestamp()


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeInterval:
    min_s: float = 2.0
    max_s: float = 120.0
    shape: str = "uniform"  # or "loguniform"

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.shape == "uniform":
            return rng.uniform(self.min_s, self.max_s, n)
        if self.shape == "loguniform":
            return np.exp(rng.uniform(math.log(self.min_s), math.log(self.max_s), n))
        raise ConfigError(f"unknown probe interval shape {self.shape!r}")


@dataclass(frozen=True)
class ZoneTraffic:
    share: float = 1.0  # fraction of the base stream traversing this zone
    passerby_scale: Optional[float] = None  # defaults to share


@dataclass(frozen=True)
class RegimeShift:
    """Parameter overrides that take effect from ``at_hour`` (simulated hours since start)."""

    at_hour: float
    device_carry_rate: Optional[float] = None
    probe_interval: Optional[ProbeInterval] = None
    passerby_rate: Optional[float] = None
    transit_speed: Optional[str] = None


@dataclass(frozen=True)
class ScenarioConfig:
    topology: ZoneTopology
    arrival_profile: tuple[tuple[int, float], ...]  # (hour of day, mean arrivals per window)
    seed: int = 0
    duration_hours: float = 24.0 * 7
    zone_traffic: dict = field(default_factory=dict)  # zone_id -> ZoneTraffic
    weekend_factor: float = 1.0
    probe_interval: ProbeInterval = ProbeInterval()
    device_carry_rate: float = 0.8
    passerby_rate: float = 0.0  # mean passing devices per window at share 1
    passerby_dwell: tuple[float, float] = (120.0, 600.0)
    transit_speed: str = "stroll"
    dwell_range: Optional[tuple[float, float]] = None  # overrides the transit speed
    camera_accuracy: float = 0.85
    camera_false_rate: float = 0.0
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    start: float = MONDAY
    regime_shift: Optional[RegimeShift] = None

    def validate(self) -> "ScenarioConfig":
        problems = []
        try:
            validate_topology(self.topology)
        except ValueError as exc:
            problems.append(f"topology: {exc}")
        hours = sorted(h for h, _ in self.arrival_profile)
        if hours != list(range(24)):
            problems.append("arrival_profile must give exactly one mean for each hour 0..23")
        if any(m < 0 for _, m in self.arrival_profile):
            problems.append("arrival means must be non-negative")
        if not 0.0 <= self.device_carry_rate <= 1.0:
            problems.append("device_carry_rate must lie in [0, 1]")
        if not 0.0 < self.camera_accuracy <= 1.0:
            problems.append("camera_accuracy must lie in (0, 1]")
        if self.passerby_rate < 0 or self.camera_false_rate < 0 or self.weekend_factor < 0:
            problems.append("rates must be non-negative")
        if self.transit_speed not in DWELL:
            problems.append(f"transit_speed must be one of {sorted(DWELL)}")
        pi = self.probe_interval
        if not 0 < pi.min_s <= pi.max_s or pi.shape not in ("uniform", "loguniform"):
            problems.append("probe_interval needs 0 < min_s <= max_s and a known shape")
        if self.duration_hours <= 0 or self.window_seconds <= 0:
            problems.append("duration and window length must be positive")
        known = {z.zone_id for z in self.topology.zones}
        for zid, t in self.zone_traffic.items():
            if zid not in known:
                problems.append(f"zone_traffic names unknown zone {zid}")
            if not 0.0 <= t.share <= 1.0:
                problems.append(f"zone {zid} share must lie in [0, 1]")
        rs = self.regime_shift
        if rs is not None and rs.device_carry_rate is not None and not 0 <= rs.device_carry_rate <= 1:
            problems.append("regime shift device_carry_rate must lie in [0, 1]")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def traffic(self, zone: Zone) -> ZoneTraffic:
        return self.zone_traffic.get(zone.zone_id, ZoneTraffic(1.0))

    @property
    def n_windows(self) -> int:
        return int(round(self.duration_hours * 3600.0 / self.window_seconds))

    def effective(self, hour: float) -> "ScenarioConfig":
        rs = self.regime_shift
        if rs is None or hour < rs.at_hour:
            return self
        changes = {k: getattr(rs, k) for k in
                   ("device_carry_rate", "probe_interval", "passerby_rate", "transit_speed")
                   if getattr(rs, k) is not None}
        if "transit_speed" in changes and self.dwell_range is not None:
            changes["dwell_range"] = None
        return replace(self, regime_shift=None, **changes)


@dataclass(frozen=True)
class GroundTruthRecord:
    window_index: int
    window_start: float
    zone_id: str
    true_passages: int

    def to_json(self) -> dict:
        return {"window_index": self.window_index, "window_start": format_instant(self.window_start),
                "zone_id": self.zone_id, "true_passages": self.true_passages}


@dataclass
class SimulationResult:
    config: ScenarioConfig
    probes: list[dict]
    camera: list[dict]
    truth: list[GroundTruthRecord]
    traversals: int
    # per probe (same order as ``probes``): dwell interval [enter, leave) in seconds
    probe_dwell: np.ndarray
    probe_is_passerby: np.ndarray

    def meta(self) -> dict:
        cfg = self.config
        return {"epoch_origin": format_instant(cfg.start), "window_seconds": cfg.window_seconds,
                "n_windows": cfg.n_windows, "seed": cfg.seed,
                "topology": cfg.topology.to_json()}

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        """Write probes/camera/truth as newline-delimited JSON plus meta and topology files."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {k: out / f"{k}.jsonl" for k in ("probes", "camera", "truth")}
        _dump(paths["probes"], self.probes)
        _dump(paths["camera"], self.camera)
        _dump(paths["truth"], (t.to_json() for t in self.truth))
        paths["meta"] = out / "meta.json"
        paths["meta"].write_text(json.dumps(self.meta(), indent=2) + "\n")
        paths["topology"] = out / "topology.json"
        paths["topology"].write_text(json.dumps(self.config.topology.to_json(), indent=2) + "\n")
        return paths


def _dump(path: Path, docs) -> None:
    with open(path, "w") as fh:
        for d in docs:
            fh.write(json.dumps(d, separators=(",", ":")) + "\n")


def _mac(value: int) -> str:
    h = f"{value:012X}"
    return ":".join(h[i:i + 2] for i in range(0, 12, 2))


def camera_observe(true_passages: int, config: ScenarioConfig,
                   rng: np.random.Generator | None = None) -> int:
    """Camera event count for ``true_passages`` traversals within one window."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    return int(_detect(rng, true_passages, config).sum()) + _false_events(rng, config)


def _detect(rng: np.random.Generator, n: int, config: ScenarioConfig) -> np.ndarray:
    if config.camera_accuracy >= 1.0:
        return np.ones(n, dtype=bool)
    return rng.random(n) < config.camera_accuracy


def _false_events(rng: np.random.Generator, config: ScenarioConfig) -> int:
    return int(rng.poisson(config.camera_false_rate)) if config.camera_false_rate > 0 else 0


def _emit_probes(rng, t_in, t_out, interval: ProbeInterval):
    """Renewal-process probe times inside [t_in, t_out) for each device.

    The first probe lands uniformly within one full gap after entry.
    Returns (device position, probe time, ordinal of the probe) arrays.
    """
    n = len(t_in)
    if n == 0:
        empty = np.empty(0)
        return empty.astype(int), empty, empty.astype(int)
    t = t_in + rng.uniform(0.0, 1.0, n) * interval.sample(rng, n)
    alive = np.arange(n)
    idx_parts, time_parts, ord_parts = [], [], []
    k = 0
    while len(alive):
        inside = t < t_out[alive]
        alive, t = alive[inside], t[inside]
        if not len(alive):
            break
        idx_parts.append(alive)
        time_parts.append(t)
        ord_parts.append(np.full(len(alive), k))
        t = t + interval.sample(rng, len(alive))
        k += 1
    if not idx_parts:
        empty = np.empty(0)
        return empty.astype(int), empty, empty.astype(int)
    return np.concatenate(idx_parts), np.concatenate(time_parts), np.concatenate(ord_parts)


def _weekday(t: float) -> int:
    return datetime.fromtimestamp(t, tz=timezone.utc).weekday()


def simulate(config: ScenarioConfig) -> SimulationResult:
    """Generate probe, camera and ground-truth logs; fully determined by the seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    zones = config.topology.ordered()
    profile = dict(config.arrival_profile)
    ws = config.window_seconds
    end = config.start + config.n_windows * ws

    # columns collected across windows
    p_time, p_zone, p_mac, p_seq, p_in, p_out, p_pass = [], [], [], [], [], [], []
    cam_time, cam_cam, cam_dir = [], [], []
    truth: list[GroundTruthRecord] = []
    traversals = 0
    next_mac = 0
    mac_values = rng.permutation(2 ** 20)  # index space for unique device ids per run
    mac_salt = int(rng.integers(1, 2 ** 27)) << 20

    for w in range(config.n_windows):
        win = window_at(w, ws, config.start)
        hour_f = (w * ws) / 3600.0
        cfg = config.effective(hour_f)
        hour = int((win.start % 86400.0) // 3600)
        mean = profile[hour]
        if _weekday(win.start) >= 5:
            mean *= cfg.weekend_factor
        n = int(rng.poisson(mean))
        carries = rng.random(n) < cfg.device_carry_rate
        ped_dev = np.full(n, -1)
        n_dev = int(carries.sum())
        ped_dev[carries] = np.arange(next_mac, next_mac + n_dev)
        next_mac += n_dev
        dmin, dmax = cfg.dwell_range or DWELL[cfg.transit_speed]

        for zi, zone in enumerate(zones):
            traffic = cfg.traffic(zone)
            goes = rng.random(n) < traffic.share if traffic.share < 1.0 else np.ones(n, dtype=bool)
            m = int(goes.sum())
            traversals += m
            truth.append(GroundTruthRecord(w, win.start, zone.zone_id, m))
            t_in = win.start + rng.uniform(0.0, ws, m)
            t_out = t_in + rng.uniform(dmin, dmax, m)
            dev = ped_dev[goes]

            if zone.is_choke_point:
                seen = _detect(rng, m, cfg)
                k_false = _false_events(rng, cfg)
                times = np.concatenate([t_in[seen], win.start + rng.uniform(0.0, ws, k_false)])
                cam_time.append(times)
                cam_cam.append(rng.integers(0, len(zone.camera_ids), len(times)))
                cam_dir.append(rng.random(len(times)) < 0.5)

            has = dev >= 0
            idx, times, ords = _emit_probes(rng, t_in[has], t_out[has], cfg.probe_interval)
            if len(idx):
                p_time.append(times)
                p_zone.append(np.full(len(idx), zi))
                p_mac.append(dev[has][idx])
                p_seq.append(ords)
                p_in.append(t_in[has][idx])
                p_out.append(t_out[has][idx])
                p_pass.append(np.zeros(len(idx), dtype=bool))

            # passers-by inside sniffer range
            scale = traffic.share if traffic.passerby_scale is None else traffic.passerby_scale
            k = int(rng.poisson(cfg.passerby_rate * scale)) if cfg.passerby_rate > 0 else 0
            if k:
                b_in = win.start + rng.uniform(0.0, ws, k)
                b_out = b_in + rng.uniform(*cfg.passerby_dwell, k)
                b_dev = np.arange(next_mac, next_mac + k)
                next_mac += k
                idx, times, ords = _emit_probes(rng, b_in, b_out, cfg.probe_interval)
                if len(idx):
                    p_time.append(times)
                    p_zone.append(np.full(len(idx), zi))
                    p_mac.append(b_dev[idx])
                    p_seq.append(ords)
                    p_in.append(b_in[idx])
                    p_out.append(b_out[idx])
                    p_pass.append(np.ones(len(idx), dtype=bool))

    if next_mac > len(mac_values):
        raise ConfigError("scenario generates more devices than the id space supports")

    def cat(parts, dtype=float):
        return np.concatenate(parts) if parts else np.empty(0, dtype=dtype)

    t_ms = np.floor(cat(p_time) * 1000.0).astype(np.int64)
    zone_i, dev_i, ords = cat(p_zone, int), cat(p_mac, int), cat(p_seq, int)
    dwell = np.stack([cat(p_in), cat(p_out)], axis=1) if p_in else np.empty((0, 2))
    passer = cat(p_pass, bool)
    keep = t_ms < int(round(end * 1000))
    t_ms, zone_i, dev_i, ords, dwell, passer = (a[keep] for a in (t_ms, zone_i, dev_i, ords, dwell, passer))
    order = np.lexsort((ords, dev_i, zone_i, t_ms))
    t_ms, zone_i, dev_i, ords, dwell, passer = (a[order] for a in (t_ms, zone_i, dev_i, ords, dwell, passer))

    seq_base = rng.integers(0, 4096, max(next_mac, 1))
    rssi = rng.integers(-90, -39, len(t_ms))
    macs: dict[int, str] = {}
    probes = []
    for t, zi, d, o, r in zip(t_ms.tolist(), zone_i.tolist(), dev_i.tolist(), ords.tolist(), rssi.tolist()):
        mac = macs.get(d)
        if mac is None:
            mac = macs[d] = _mac(mac_salt | int(mac_values[d]))
        probes.append({"mac": mac, "sniffer_id": zones[zi].sniffer_id,
                       "timestamp": format_instant(t / 1000.0),
                       "sequence_number": int((seq_base[d] + o) % 4096), "rssi": r})

    c_ms = np.floor(cat(cam_time) * 1000.0).astype(np.int64)
    c_cam, c_dir = cat(cam_cam, int), cat(cam_dir, bool)
    corder = np.argsort(c_ms, kind="stable")
    choke = config.topology.choke
    camera = []
    for j, i in enumerate(corder.tolist()):
        cam_id = choke.camera_ids[int(c_cam[i])]
        camera.append({"camera_id": cam_id, "direction": "MoveIn" if c_dir[i] else "MoveOut",
                       "timestamp": format_instant(int(c_ms[i]) / 1000.0), "count": 1,
                       "event_id": f"{cam_id}-{j}"})

    return SimulationResult(config=config, probes=probes, camera=camera, truth=truth,
                            traversals=traversals, probe_dwell=dwell, probe_is_passerby=passer)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _profile(values) -> tuple[tuple[int, float], ...]:
    assert len(values) == 24
    return tuple((h, float(v)) for h, v in enumerate(values))


RAILWAY_PROFILE = _profile([10, 3, 1, 1, 2, 20, 120, 380, 420, 180, 90, 80,
                            90, 85, 80, 120, 260, 320, 160, 80, 50, 40, 30, 20])
MALL_PROFILE = _profile([2, 1, 1, 1, 1, 1, 3, 8, 15, 30, 50, 75,
                         110, 100, 75, 70, 75, 90, 100, 75, 45, 25, 10, 4])

PEAK_HOURS = {"railway_station": (7, 8, 16, 17)}


def railway_topology() -> ZoneTopology:
    return ZoneTopology(zones=(
        Zone("M1", "sniffer-M1", -41.27870, 174.78060, True, ("C103", "C104", "C105", "C106"),
             "02:00:5E:10:00:01"),
        Zone("M2", "sniffer-M2", -41.27925, 174.77985, False, (), "02:00:5E:10:00:02"),
    ))


def mall_topology() -> ZoneTopology:
    coords = [(-43.53320, 172.63460), (-43.53345, 172.63510), (-43.53370, 172.63555),
              (-43.53300, 172.63590), (-43.53395, 172.63470)]
    return ZoneTopology(zones=tuple(
        Zone(f"Z{i + 1}", f"sniffer-{i + 1}", lat, lon, i == 1, ("C0",) if i == 1 else (),
             f"02:00:5E:20:00:{i + 1:02X}")
        for i, (lat, lon) in enumerate(coords)))


def preset(name: str, seed: int = 0, days: float = 7.0,
           window_seconds: float = DEFAULT_WINDOW_SECONDS) -> ScenarioConfig:
    """Scenario presets for the two pilot deployment shapes.

    ``restart_mall``: strolling shoppers plus steady street traffic near the
    sniffers, so Wi-Fi counts run high all day and stay high at night.
    ``railway_station``: hurried commuters with weekday morning and afternoon
    peaks that Wi-Fi undercounts, and a few lingering devices that dominate
    quiet hours.
    """
    if name == "restart_mall":
        return ScenarioConfig(
            topology=mall_topology(), arrival_profile=MALL_PROFILE, seed=seed,
            duration_hours=24.0 * days, window_seconds=window_seconds,
            zone_traffic={"Z1": ZoneTraffic(0.7), "Z2": ZoneTraffic(1.0), "Z3": ZoneTraffic(0.6),
                          "Z4": ZoneTraffic(0.5), "Z5": ZoneTraffic(0.4)},
            weekend_factor=1.3, probe_interval=ProbeInterval(2.0, 120.0),
            device_carry_rate=0.8, passerby_rate=25.0, passerby_dwell=(60.0, 300.0),
            transit_speed="stroll", dwell_range=(60.0, 300.0),
            camera_accuracy=0.85, camera_false_rate=0.5)
    if name == "railway_station":
        return ScenarioConfig(
            topology=railway_topology(), arrival_profile=RAILWAY_PROFILE, seed=seed,
            duration_hours=24.0 * days, window_seconds=window_seconds,
            zone_traffic={"M1": ZoneTraffic(1.0), "M2": ZoneTraffic(0.5)},
            weekend_factor=0.3, probe_interval=ProbeInterval(2.0, 120.0),
            device_carry_rate=0.8, passerby_rate=8.0, passerby_dwell=(120.0, 900.0),
            transit_speed="commute", camera_accuracy=0.85, camera_false_rate=0.5)
    raise ConfigError(f"unknown preset {name!r}; choose restart_mall or railway_station")


PRESETS = ("restart_mall", "railway_station")


def event_day_shift(at_hour: float = 72.0) -> RegimeShift:
    """Step change in the Wi-Fi/camera correlation: phones in active use from ``at_hour``."""
    return RegimeShift(at_hour=at_hour, probe_interval=ProbeInterval(2.0, 20.0),
                       device_carry_rate=0.95)
