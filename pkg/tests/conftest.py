import dataclasses
import time
from pathlib import Path

import pytest

from crowdcal.core import Zone, ZoneTopology
from crowdcal.ingestion import SaltConfig
from crowdcal.pipeline import PipelineConfig, run_replay
from crowdcal.simulator import event_day_shift, preset, simulate

SALT = SaltConfig(bytes(range(32)))
COMPARE = (("adaptive_linear", 10), ("adaptive_linear", 100))


@pytest.fixture
def salt():
    return SALT


@pytest.fixture
def topology():
    return ZoneTopology((
        Zone("M1", "sniffer-M1", 52.37, 4.89, True, ("C103", "C104"), "02:00:5E:00:00:01"),
        Zone("M2", "sniffer-M2", 52.38, 4.90, False, (), "02:00:5E:00:00:02"),
    ))


@dataclasses.dataclass
class Run:
    name: str
    sim: object
    replay: object
    sim_dir: Path
    seconds: float


def _run(tmp_path_factory, name, config):
    t0 = time.perf_counter()
    sim = simulate(config)
    out = tmp_path_factory.mktemp(name)
    sim.write(out)
    cfg = PipelineConfig(window_seconds=config.window_seconds, epoch_origin=config.start,
                         algorithm="proportional", compare=COMPARE, salt_hex=SALT.salt.hex())
    rep = run_replay(out / "probes.jsonl", out / "camera.jsonl", config.topology, cfg,
                     n_windows=config.n_windows)
    return Run(name, sim, rep, out, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def railway_run(tmp_path_factory):
    return _run(tmp_path_factory, "railway", preset("railway_station", seed=0, days=7))


@pytest.fixture(scope="session")
def mall_run(tmp_path_factory):
    return _run(tmp_path_factory, "mall", preset("restart_mall", seed=0, days=7))


@pytest.fixture(scope="session")
def shift_run(tmp_path_factory):
    cfg = dataclasses.replace(preset("railway_station", seed=0, days=7),
                              regime_shift=event_day_shift(72.0))
    return _run(tmp_path_factory, "shift", cfg)


# -- acceptance summary -----------------------------------------------------

_RESULTS: dict[int, dict] = {}


@pytest.fixture
def criterion(request):
    """Record details for the acceptance summary line of the current test."""
    marker = request.node.get_closest_marker("acceptance")
    entry = _RESULTS.setdefault(marker.args[0], {"title": marker.args[1], "detail": "",
                                                 "outcome": None})
    return entry


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    entry = _RESULTS.setdefault(marker.args[0], {"title": marker.args[1], "detail": "",
                                                 "outcome": None})
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry["outcome"] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        line = f"criterion {n:>2} {e['outcome'] or 'NOT RUN'}: {e['title']}"
        if e["detail"]:
            line += f" [{e['detail']}]"
        terminalreporter.write_line(line)
