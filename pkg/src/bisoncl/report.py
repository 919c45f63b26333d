"""Run reports: per-cell results, seed aggregates, and file emission.

``results.json`` round-trips the full report. Wall-clock durations are the
only nondeterministic content, so byte comparisons go through
:func:`canonical_bytes`, which strips them; everything else reproduces
exactly for a fixed config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .metrics import (AccuracyMatrix, ConfusionMatrix, accuracy_matrix_to_csv,
                      confusion_to_csv)


@dataclass
class CellResult:
    method: str
    capacity: int
    seed: int
    matrix: Optional[AccuracyMatrix] = None
    final: dict = field(default_factory=dict)  # aa, af (None if 1 task), ai
    confusion: Optional[ConfusionMatrix] = None
    duration_s: float = 0.0
    error: Optional[str] = None


@dataclass
class RunReport:
    config: dict
    cells: list
    aggregates: list  # dicts keyed method/capacity with mean/std per metric


def aggregate_cells(cells: list) -> list:
    """Mean and std (ddof=1, omitted below 2 seeds) of the final metrics per
    (method, capacity), in first-seen order."""
    groups: dict[tuple, list] = {}
    order: list[tuple] = []
    for cell in cells:
        key = (cell.method, cell.capacity)
        if key not in groups:
            groups[key] = []
            order.append(key)
        if cell.error is None:
            groups[key].append(cell)
    out = []
    for key in order:
        method, capacity = key
        entry = {"method": method, "capacity": capacity,
                 "num_seeds": len(groups[key])}
        for name in ("aa", "af", "ai"):
            values = [c.final[name] for c in groups[key] if c.final.get(name) is not None]
            if values:
                entry[f"{name}_mean"] = float(np.mean(values))
                entry[f"{name}_std"] = float(np.std(values, ddof=1)) if len(values) >= 2 else None
            else:
                entry[f"{name}_mean"] = None
                entry[f"{name}_std"] = None
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# JSON round trip

def report_to_dict(report: RunReport) -> dict:
    cells = []
    for c in report.cells:
        cells.append({
            "method": c.method,
            "capacity": c.capacity,
            "seed": c.seed,
            "accuracy_matrix": c.matrix.rows if c.matrix else None,
            "upper_bounds": c.matrix.upper_bounds if c.matrix else None,
            "final": c.final,
            "confusion": c.confusion.counts.tolist() if c.confusion is not None else None,
            "duration_s": c.duration_s,
            "error": c.error,
        })
    return {"config": report.config, "cells": cells, "aggregates": report.aggregates}


def report_from_dict(data: dict) -> RunReport:
    cells = []
    for c in data["cells"]:
        matrix = None
        if c.get("accuracy_matrix") is not None:
            matrix = AccuracyMatrix()
            for row in c["accuracy_matrix"]:
                matrix.add_row(row)
            matrix.upper_bounds = list(c.get("upper_bounds") or [])
        confusion = None
        if c.get("confusion") is not None:
            confusion = ConfusionMatrix(np.asarray(c["confusion"], dtype=np.int64))
        cells.append(CellResult(
            method=c["method"], capacity=c["capacity"], seed=c["seed"],
            matrix=matrix, final=dict(c.get("final") or {}), confusion=confusion,
            duration_s=c.get("duration_s", 0.0), error=c.get("error")))
    return RunReport(config=data["config"], cells=cells,
                     aggregates=list(data.get("aggregates") or []))


def _strip_durations(obj):
    if isinstance(obj, dict):
        return {k: _strip_durations(v) for k, v in obj.items() if k != "duration_s"}
    if isinstance(obj, list):
        return [_strip_durations(v) for v in obj]
    return obj


def canonical_bytes(data: dict) -> bytes:
    """Deterministic serialization of a report dict minus wall-clock fields."""
    return json.dumps(_strip_durations(data), sort_keys=True, indent=2).encode()


def save_report(report: RunReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_report(path) -> RunReport:
    with open(path) as fh:
        return report_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# file emission

def _cell_tag(cell: CellResult) -> str:
    return f"{cell.method}_m{cell.capacity}_s{cell.seed}"


def emit_report(report: RunReport, outdir) -> list:
    """Write results.json, per-cell CSVs, summary.csv, and interplay.svg.
    Returns the written paths."""
    if not report.cells:
        raise ValueError("emit_report: report has no cells")
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValueError(f"emit_report: cannot create output directory {out}: {exc}")
    written = []

    results = out / "results.json"
    save_report(report, results)
    written.append(results)

    for cell in report.cells:
        if cell.error is not None:
            continue
        acc_path = out / f"accuracy_matrix_{_cell_tag(cell)}.csv"
        accuracy_matrix_to_csv(cell.matrix, acc_path)
        written.append(acc_path)
        conf_path = out / f"confusion_{_cell_tag(cell)}.csv"
        confusion_to_csv(cell.confusion, conf_path)
        written.append(conf_path)

    summary = out / "summary.csv"
    with open(summary, "w", newline="") as fh:
        fh.write("method,capacity,aa_mean,aa_std,af_mean,af_std,ai_mean,ai_std\n")
        for agg in report.aggregates:
            fields = [agg["method"], str(agg["capacity"])]
            for name in ("aa", "af", "ai"):
                mean = agg.get(f"{name}_mean")
                std = agg.get(f"{name}_std")
                fields.append("" if mean is None else repr(mean))
                fields.append("" if std is None else repr(std))
            fh.write(",".join(fields) + "\n")
    written.append(summary)

    svg = out / "interplay.svg"
    svg.write_text(interplay_svg(report))
    written.append(svg)
    return written


# ---------------------------------------------------------------------------
# interplay scatter (forgetting vs intransigence, colored by accuracy)

_AA_BUCKETS = (0.2, 0.4, 0.6, 0.8)
_AA_COLORS = ("#d0d1e6", "#a6bddb", "#67a9cf", "#1c9099", "#016c59")


def _aa_color(aa: Optional[float]) -> str:
    if aa is None:
        return "#999999"
    for i, edge in enumerate(_AA_BUCKETS):
        if aa < edge:
            return _AA_COLORS[i]
    return _AA_COLORS[-1]


def interplay_svg(report: RunReport, width: int = 640, height: int = 480) -> str:
    """Scatter of the aggregate metrics: x = intransigence, y = forgetting,
    one marker per (method, capacity), fill bucketed by average accuracy."""
    points = [(a.get("ai_mean"), a.get("af_mean"), a.get("aa_mean"),
               f"{a['method']} (M={a['capacity']})")
              for a in report.aggregates]
    points = [p for p in points if p[0] is not None and p[1] is not None]

    margin = 70
    x0, y0 = margin, height - margin
    x1, y1 = width - margin, margin
    xs = [p[0] for p in points] or [0.0]
    ys = [p[1] for p in points] or [0.0]
    xmin, xmax = min(xs + [0.0]), max(xs + [0.0])
    ymin, ymax = min(ys + [0.0]), max(ys + [0.0])
    xpad = 0.1 * (xmax - xmin) or 0.1
    ypad = 0.1 * (ymax - ymin) or 0.1
    xmin, xmax = xmin - xpad, xmax + xpad
    ymin, ymax = ymin - ypad, ymax + ypad

    def sx(v):
        return x0 + (v - xmin) / (xmax - xmin) * (x1 - x0)

    def sy(v):
        return y0 + (v - ymin) / (ymax - ymin) * (y1 - y0)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2:.1f}" y="{height - 18}" text-anchor="middle" '
        f'font-size="14">average intransigence</text>',
        f'<text x="20" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 20 {(y0 + y1) / 2:.1f})">average forgetting</text>',
    ]
    for i in range(5):
        xv = xmin + (xmax - xmin) * i / 4
        yv = ymin + (ymax - ymin) * i / 4
        lines.append(f'<line x1="{sx(xv):.1f}" y1="{y0}" x2="{sx(xv):.1f}" y2="{y0 + 5}" '
                     f'stroke="black"/>')
        lines.append(f'<text x="{sx(xv):.1f}" y="{y0 + 20}" text-anchor="middle" '
                     f'font-size="11">{xv:.2f}</text>')
        lines.append(f'<line x1="{x0 - 5}" y1="{sy(yv):.1f}" x2="{x0}" y2="{sy(yv):.1f}" '
                     f'stroke="black"/>')
        lines.append(f'<text x="{x0 - 10}" y="{sy(yv) + 4:.1f}" text-anchor="end" '
                     f'font-size="11">{yv:.2f}</text>')
    for ai, af, aa, label in points:
        lines.append(f'<circle cx="{sx(ai):.1f}" cy="{sy(af):.1f}" r="7" '
                     f'fill="{_aa_color(aa)}" stroke="black" stroke-width="0.8"/>')
        lines.append(f'<text x="{sx(ai) + 10:.1f}" y="{sy(af) + 4:.1f}" '
                     f'font-size="11">{label}</text>')
    # accuracy legend
    lx, ly = x1 - 150, y1 + 4
    lines.append(f'<text x="{lx}" y="{ly}" font-size="11">average accuracy</text>')
    edges = (0.0,) + _AA_BUCKETS + (1.0,)
    for i, color in enumerate(_AA_COLORS):
        yy = ly + 14 + i * 16
        lines.append(f'<rect x="{lx}" y="{yy - 9}" width="12" height="12" fill="{color}" '
                     f'stroke="black" stroke-width="0.5"/>')
        lines.append(f'<text x="{lx + 18}" y="{yy}" font-size="11">'
                     f'{edges[i]:.1f} - {edges[i + 1]:.1f}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
