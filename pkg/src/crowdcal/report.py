"""Join estimate histories with ground truth and tabulate accuracy per algorithm."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional

from . import evaluation as ev

WIFI_ONLY = "wifi_only"
ROW_FIELDS = ("algorithm", "zone_id", "n_windows", "rmse", "nrmse",
              "mean", "std_dev", "min", "q1", "median", "q3", "max",
              "rmse_reduction", "mean_error_reduction")


class MisalignedError(ValueError):
    def __init__(self, zone_id: str, window_index: int):
        self.zone_id, self.window_index = zone_id, window_index
        super().__init__(f"truth has no value for zone {zone_id} window {window_index}")


def load_truth(path: str | Path) -> dict[tuple[str, int], float]:
    """Ground truth keyed by (zone_id, window_index), from JSONL or CSV."""
    path = Path(path)
    out = {}
    if path.suffix in (".jsonl", ".ndjson", ".json"):
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    if rows and "true_passages" not in rows[0] and "truth" not in rows[0] and "calibrated" in rows[0]:
        # an estimate history used as truth: take the published algorithm's values
        first = rows[0]["algorithm"]
        rows = [dict(r, truth=r["calibrated"]) for r in rows if r["algorithm"] == first]
    for r in rows:
        value = r.get("true_passages", r.get("truth"))
        out[(str(r["zone_id"]), int(r["window_index"]))] = float(value)
    return out


def _series(estimates: list[dict], truth: dict, algorithm: str, zone: str, raw: bool):
    rows = sorted((e for e in estimates if e["algorithm"] == algorithm and e["zone_id"] == zone),
                  key=lambda e: e["window_index"])
    est, g = [], []
    for e in rows:
        key = (zone, e["window_index"])
        if key not in truth:
            raise MisalignedError(zone, e["window_index"])
        est.append(float(e["raw_count"]) if raw else float(e["calibrated"]))
        g.append(truth[key])
    return est, g, [e["window_index"] for e in rows]


def evaluate_history(estimates: list[dict], truth: dict, zones: Optional[Iterable[str]] = None,
                     include_choke: bool = False) -> dict:
    """One row per (algorithm, zone) including the uncalibrated Wi-Fi-only baseline."""
    algorithms = list(dict.fromkeys(e["algorithm"] for e in estimates))
    all_zones = list(dict.fromkeys(e["zone_id"] for e in estimates
                                   if include_choke or not e["is_choke_point"]))
    if zones is not None:
        zones = list(zones)
        unknown = [z for z in zones if z not in set(e["zone_id"] for e in estimates)]
        if unknown:
            raise KeyError(f"unknown zone(s): {', '.join(unknown)}")
    else:
        zones = all_zones
    rows = []
    for zone in zones:
        base_est, g, _ = _series(estimates, truth, algorithms[0], zone, raw=True)
        if not g:
            continue
        baseline = ev.evaluate(base_est, g)
        rows.append(_row(WIFI_ONLY, zone, baseline, None))
        for alg in algorithms:
            est, g2, _ = _series(estimates, truth, alg, zone, raw=False)
            rows.append(_row(alg, zone, ev.evaluate(est, g2), baseline))
    summary: dict = {"rmse_reduction": {}, "mean_error_reduction": {}}
    for alg in algorithms:
        for key in summary:
            vals = [r[key] for r in rows if r["algorithm"] == alg and r[key] is not None]
            summary[key][alg] = sum(vals) / len(vals) if vals else None
    for key in list(summary):
        vals = [v for v in summary[key].values() if v is not None]
        summary[key]["average"] = sum(vals) / len(vals) if vals else None
    return {"rows": rows, "summary": summary}


def _row(alg: str, zone: str, rep: ev.EvaluationReport, baseline) -> dict:
    s = rep.error_stats
    row = {"algorithm": alg, "zone_id": zone, "n_windows": rep.n_windows, "rmse": rep.rmse,
           "nrmse": rep.nrmse, "mean": s.mean, "std_dev": s.std_dev, "min": s.min, "q1": s.q1,
           "median": s.median, "q3": s.q3, "max": s.max,
           "rmse_reduction": None, "mean_error_reduction": None}
    if baseline is not None:
        try:
            row["rmse_reduction"] = ev.rmse_reduction(baseline, rep)
        except ZeroDivisionError:
            pass
        try:
            row["mean_error_reduction"] = ev.improvement_ratio(baseline, rep)
        except ZeroDivisionError:
            pass
    return row


def format_table(report: dict) -> str:
    head = ("algorithm", "zone", "RMSE", "NRMSE", "mean", "std", "min", "Q1", "median", "Q3", "max")
    lines = ["  ".join(f"{h:>10}" if i > 1 else f"{h:<22}" if i == 0 else f"{h:<6}"
                       for i, h in enumerate(head))]
    for r in report["rows"]:
        nr = "n/a" if r["nrmse"] is None else f"{r['nrmse']:.3f}"
        cells = [f"{r['algorithm']:<22}", f"{r['zone_id']:<6}", f"{r['rmse']:>10.2f}", f"{nr:>10}"]
        cells += [f"{r[k]:>10.1f}" for k in ("mean", "std_dev", "min", "q1", "median", "q3", "max")]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def write_report(report: dict, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "csv": out / "report.csv", "table": out / "report.txt"}
    paths["json"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in report["rows"]:
            w.writerow(["" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                        for k in ROW_FIELDS])
    paths["table"].write_text(format_table(report))
    return paths


def window_errors(estimates: list[dict], truth: dict, zone: str) -> list[dict]:
    """Per-window signed errors for every algorithm in one zone, for plotting."""
    algorithms = list(dict.fromkeys(e["algorithm"] for e in estimates))
    out = []
    base, g, idx = _series(estimates, truth, algorithms[0], zone, raw=True)
    cols = {WIFI_ONLY: base}
    for alg in algorithms:
        cols[alg] = _series(estimates, truth, alg, zone, raw=False)[0]
    for i, w in enumerate(idx):
        row = {"window_index": w, "truth": g[i]}
        row.update({a: cols[a][i] - g[i] for a in cols})
        out.append(row)
    return out
