"""``crowdcal`` command line: simulate, replay, evaluate, export, serve.

Exit codes: 0 success, 1 runtime failure, 2 bad input (usage errors,
unreadable or misaligned files, unknown zones).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from . import plotting, report
from .core import TopologyError, ZoneTopology, load_topology, parse_instant
from .ingestion import FileTailSource, LogFormatError
from .pipeline import (
    COEFFICIENT_COLUMNS, CONFIG_SECTIONS, ESTIMATE_COLUMNS, Pipeline, PipelineConfig,
    read_estimates_csv, rows_to_csv, run_replay,
)
from .simulator import PRESETS, ConfigError, event_day_shift, preset, simulate

log = logging.getLogger("crowdcal")

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2
STANDARD_VARIANTS = (("proportional", 10), ("adaptive_linear", 10), ("adaptive_linear", 100))
EXPORT_COLUMNS = ("zone_id", "window_index", "window_start", "raw", "calibrated",
                  "coefficient", "fallback")


class InputError(Exception):
    pass


def _variant(text: str) -> tuple[str, int]:
    alg, _, q = text.partition(":")
    return alg, int(q or 10)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdcal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    p.subcommands = sub.choices

    def common(sp):
        sp.add_argument("--config", help="JSON config; a section named after the subcommand "
                                         "supplies flag defaults")
        return sp

    s = common(sub.add_parser("simulate", help="generate synthetic probe/camera/truth logs"))
    s.add_argument("--preset", choices=PRESETS, default="railway_station")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--days", type=float, default=7.0)
    s.add_argument("--window-seconds", type=float, default=900.0)
    s.add_argument("--shift-at-hour", type=float, default=None,
                   help="switch devices to active use at this hour (correlation step change)")
    s.add_argument("--out", required=True)

    r = common(sub.add_parser("replay", help="run logs through the pipeline with a virtual clock"))
    r.add_argument("--sim-dir", help="directory written by `simulate`")
    r.add_argument("--probes")
    r.add_argument("--camera")
    r.add_argument("--topology")
    r.add_argument("--out", required=True)
    r.add_argument("--algorithm", choices=("proportional", "adaptive_linear"))
    r.add_argument("--q", type=int)
    r.add_argument("--compare", action="append", metavar="ALG[:Q]",
                   help="shadow variant; repeatable; 'none' disables (default: the standard set)")
    r.add_argument("--window-seconds", type=float)
    r.add_argument("--n-windows", type=int)
    r.add_argument("--store", help="persist records and broker state under this directory")
    r.add_argument("--salt", help="hex salt for device anonymization")
    mode = r.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=True)
    mode.add_argument("--lenient", dest="strict", action="store_false")
    r.add_argument("--figures", action="store_true", help="also render PNG figures")

    e = common(sub.add_parser("evaluate", help="score an estimate history against ground truth"))
    e.add_argument("--estimates", required=True)
    e.add_argument("--truth", required=True, help="truth .jsonl or .csv")
    e.add_argument("--out", required=True)
    e.add_argument("--zone", action="append")
    e.add_argument("--include-choke", action="store_true")
    e.add_argument("--errors", action="store_true", help="also dump per-window signed errors")
    e.add_argument("--figures", action="store_true")

    x = common(sub.add_parser("export", help="plot-ready per-zone series"))
    x.add_argument("--history", required=True, help="estimates.csv from replay")
    x.add_argument("--zone", action="append")
    x.add_argument("--algorithm", help="calibration label (default: the published one)")
    x.add_argument("--format", choices=("csv", "json"), default="csv")
    x.add_argument("--out", help="output file (default: stdout)")
    x.add_argument("--figure", help="also render the series to this PNG")

    v = common(sub.add_parser("serve", help="run the HTTP ingestion service and broker"))
    v.add_argument("--topology")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8080)
    v.add_argument("--store")
    v.add_argument("--tail", action="append", default=[], help="NDJSON file to follow")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.config_doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        args.config_doc = doc
        section = doc.get(args.command, {})
        if section:
            defaults = {k.replace("-", "_"): v for k, v in section.items()}
            # argparse appends to list defaults, so repeatable options are filled in afterwards
            lists = {k: defaults.pop(k) for k in list(defaults) if isinstance(defaults[k], list)}
            parser.subcommands[args.command].set_defaults(**defaults)
            args = parser.parse_args(argv)
            args.config_doc = doc
            for k, v in lists.items():
                if getattr(args, k, None) is None:
                    setattr(args, k, v)
    return args


def _pipeline_config(args, **overrides) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig.load()
    doc = {k: getattr(config, k) for k in config.__dataclass_fields__}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**doc)


def _topology(args, fallback: Path | None = None) -> ZoneTopology:
    path = getattr(args, "topology", None) or args.config_doc.get("topology") or fallback
    if path is None:
        raise InputError("no topology given (use --topology or a 'topology' config key)")
    return load_topology(path)


# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    config = preset(args.preset, seed=args.seed, days=args.days,
                    window_seconds=args.window_seconds)
    if args.shift_at_hour is not None:
        config = dataclasses.replace(config, regime_shift=event_day_shift(args.shift_at_hour))
    result = simulate(config)
    paths = result.write(args.out)
    print(json.dumps({"preset": args.preset, "seed": args.seed, "probes": len(result.probes),
                      "camera_events": len(result.camera), "windows": config.n_windows,
                      "files": {k: str(v) for k, v in paths.items()}}, indent=2))
    return EXIT_OK


def cmd_replay(args) -> int:
    probes, camera, topo_path, n_windows, origin, truth_path = (
        args.probes, args.camera, None, args.n_windows, None, None)
    if args.sim_dir:
        d = Path(args.sim_dir)
        probes = probes or d / "probes.jsonl"
        camera = camera or d / "camera.jsonl"
        topo_path = d / "topology.json"
        meta_path = d / "meta.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            n_windows = n_windows if n_windows is not None else meta.get("n_windows")
            origin = parse_instant(meta["epoch_origin"])
        if (d / "truth.jsonl").exists():
            truth_path = d / "truth.jsonl"
    if probes is None and camera is None:
        raise InputError("nothing to replay: give --sim-dir or --probes/--camera")
    topology = _topology(args, topo_path)

    overrides = {"algorithm": args.algorithm, "q": args.q, "window_seconds": args.window_seconds,
                 "store_path": args.store, "salt_hex": args.salt, "epoch_origin": origin}
    config = _pipeline_config(args, **overrides)
    if args.compare == ["none"]:
        compare = ()
    elif args.compare:
        compare = tuple(_variant(c) for c in args.compare)
    elif config.compare:
        compare = config.compare
    else:
        primary = (config.algorithm, config.q)
        compare = tuple(v for v in STANDARD_VARIANTS
                        if v != primary and not (v[0] == "proportional" == primary[0]))
    config = _pipeline_config(args, **overrides, compare=compare)

    result = run_replay(probes, camera, topology, config, n_windows=n_windows,
                        strict=args.strict)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows_to_csv(result.estimates, ESTIMATE_COLUMNS, out / "estimates.csv")
    rows_to_csv(result.coefficients, COEFFICIENT_COLUMNS, out / "coefficients.csv")
    pipe = result.pipeline
    summary = {"finalized_windows": len(pipe.store.finalized),
               "algorithms": [s.label for s in pipe.states],
               "rejected_records": result.rejected,
               "skipped_lines": len(result.skipped_lines),
               "estimates": str(out / "estimates.csv"),
               "coefficients": str(out / "coefficients.csv")}
    if args.figures and result.estimates:
        truth = report.load_truth(truth_path) if truth_path else {}
        figs = [plotting.plot_coefficients(result.coefficients, out / "coefficients.png")]
        for zone in topology.ordered():
            figs.append(plotting.plot_zone_series(result.estimates, truth, zone.zone_id,
                                                  out / f"series_{zone.zone_id}.png"))
        summary["figures"] = [str(f) for f in figs]
    if hasattr(pipe.broker, "close"):
        pipe.broker.close()
    pipe.store.close()
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    estimates = read_estimates_csv(args.estimates)
    truth = report.load_truth(args.truth)
    try:
        rep = report.evaluate_history(estimates, truth, zones=args.zone,
                                      include_choke=args.include_choke)
    except report.MisalignedError as exc:
        print(f"error: misaligned windows: zone {exc.zone_id} window {exc.window_index} "
              f"has no ground truth", file=sys.stderr)
        return EXIT_INPUT
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_INPUT
    paths = report.write_report(rep, args.out)
    out = Path(args.out)
    zones = list(dict.fromkeys(r["zone_id"] for r in rep["rows"]))
    if args.errors:
        for z in zones:
            rows = report.window_errors(estimates, truth, z)
            cols = tuple(rows[0]) if rows else ("window_index", "truth")
            rows_to_csv(rows, cols, out / f"errors_{z}.csv")
    if args.figures and rep["rows"]:
        plotting.plot_error_summary(rep, out / "report.png")
        for z in zones:
            plotting.plot_zone_series(estimates, truth, z, out / f"series_{z}.png")
    sys.stdout.write(paths["table"].read_text())
    return EXIT_OK


def export_series(history: list[dict], zones=None, algorithm=None) -> dict[str, list[dict]]:
    """Per-zone (window_start, raw, calibrated, coefficient, fallback) series for one algorithm."""
    if not history:
        return {}
    known = list(dict.fromkeys(h["zone_id"] for h in history))
    if zones:
        unknown = [z for z in zones if z not in known]
        if unknown:
            raise InputError(f"unknown zone(s): {', '.join(unknown)}")
    algorithm = algorithm or history[0]["algorithm"]
    if algorithm not in {h["algorithm"] for h in history}:
        raise InputError(f"algorithm {algorithm!r} not in history")
    out: dict[str, list[dict]] = {}
    for z in zones or known:
        rows = sorted((h for h in history if h["zone_id"] == z and h["algorithm"] == algorithm),
                      key=lambda h: h["window_index"])
        out[z] = [{"window_index": h["window_index"], "window_start": h["window_start"],
                   "raw": h["raw_count"], "calibrated": h["calibrated"],
                   "coefficient": h["coefficient"], "fallback": h["fallback"]} for h in rows]
    return out


def cmd_export(args) -> int:
    series = export_series(read_estimates_csv(args.history), args.zone, args.algorithm)
    if args.format == "json":
        text = json.dumps(series, indent=2) + "\n"
    else:
        text = rows_to_csv(({"zone_id": z, **r} for z, rows in series.items() for r in rows),
                           EXPORT_COLUMNS)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.figure and series:
        rows = [{"algorithm": "calibrated", "zone_id": z, **r, "raw_count": r["raw"]}
                for z, rs in series.items() for r in rs]
        for z in series:
            target = Path(args.figure)
            if len(series) > 1:
                target = target.with_name(f"{target.stem}_{z}{target.suffix}")
            plotting.plot_zone_series(rows, {}, z, target)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import CrowdService

    topology = _topology(args)
    config = _pipeline_config(args, store_path=args.store)
    pipe = Pipeline(topology, config)
    svc = CrowdService(pipe, (args.host, args.port),
                       sources=[FileTailSource(p) for p in args.tail]).start()
    log.info("listening on %s", svc.url)
    print(json.dumps({"listening": svc.url}), flush=True)
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    done.wait()
    svc.stop()
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "replay": cmd_replay, "evaluate": cmd_evaluate,
            "export": cmd_export, "serve": cmd_serve}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    unknown = set(args.config_doc) - set(CONFIG_SECTIONS) - set(PipelineConfig.__dataclass_fields__)
    if unknown:
        print(f"error: unknown config keys {sorted(unknown)}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except (InputError, LogFormatError, TopologyError, ConfigError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
