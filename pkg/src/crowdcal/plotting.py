"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core import parse_instant  # noqa: E402

TRUTH_COLOR = "#000000"
RAW_COLOR = "#7f7f7f"
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _hours(rows, origin=None):
    t = [parse_instant(r["window_start"]) for r in rows]
    origin = t[0] if origin is None else origin
    return [(x - origin) / 3600.0 for x in t]


def plot_zone_series(estimates: list[dict], truth: dict, zone: str, path: str | Path) -> Path:
    """Ground truth, raw Wi-Fi count and each calibrated series for one zone."""
    by_alg = defaultdict(list)
    for e in estimates:
        if e["zone_id"] == zone:
            by_alg[e["algorithm"]].append(e)
    fig, ax = plt.subplots(figsize=(11, 4))
    first = True
    for i, (alg, rows) in enumerate(by_alg.items()):
        rows.sort(key=lambda e: e["window_index"])
        x = _hours(rows)
        if first:
            g = [truth.get((zone, e["window_index"])) for e in rows]
            if any(v is not None for v in g):
                ax.plot(x, g, color=TRUTH_COLOR, lw=1.2, label="ground truth")
            ax.plot(x, [e["raw_count"] for e in rows], color=RAW_COLOR, lw=0.8, label="Wi-Fi only")
            first = False
        ax.plot(x, [e["calibrated"] for e in rows], color=PALETTE[i % len(PALETTE)], lw=0.8,
                label=alg)
    ax.set_xlabel("hours since first window")
    ax.set_ylabel("people per window")
    ax.set_title(f"zone {zone}")
    ax.legend(loc="upper right", fontsize=8, frameon=False)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_error_summary(report: dict, path: str | Path) -> Path:
    rows = report["rows"]
    zones = list(dict.fromkeys(r["zone_id"] for r in rows))
    algs = list(dict.fromkeys(r["algorithm"] for r in rows))
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    width = 0.8 / max(len(algs), 1)
    for ax, key, label in ((axes[0], "rmse", "RMSE"), (axes[1], "nrmse", "NRMSE")):
        for j, alg in enumerate(algs):
            vals = []
            for z in zones:
                r = next((r for r in rows if r["zone_id"] == z and r["algorithm"] == alg), None)
                vals.append(r[key] if r and r[key] is not None else 0.0)
            ax.bar([i + j * width for i in range(len(zones))], vals, width,
                   label=alg, color=PALETTE[j % len(PALETTE)] if j else RAW_COLOR)
        ax.set_xticks([i + width * (len(algs) - 1) / 2 for i in range(len(zones))])
        ax.set_xticklabels(zones)
        ax.set_ylabel(label)
        ax.spines[["top", "right"]].set_visible(False)
    axes[0].legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_coefficients(coefficients: list[dict], path: str | Path) -> Path:
    by_alg = defaultdict(list)
    for c in coefficients:
        by_alg[c["algorithm"]].append(c)
    fig, ax = plt.subplots(figsize=(11, 3.5))
    for i, (alg, rows) in enumerate(by_alg.items()):
        rows.sort(key=lambda c: c["window_index"])
        x = _hours(rows)
        y = [c["coefficient"] if c["coefficient"] is not None else float("nan") for c in rows]
        ax.plot(x, y, lw=0.8, color=PALETTE[i % len(PALETTE)], label=alg)
    ax.set_xlabel("hours since first window")
    ax.set_ylabel("coefficient a")
    ax.legend(fontsize=8, frameon=False)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
