"""Dependency-free SVG charts: per-objective GAUC bars and a loss histogram.

Input is either a single evaluation report (``objective,metric,value``) or an
ablation table (``metric,<col1>,<col2>,...``); each column becomes one bar
series. Traces given as ``NAME=PATH`` add a histogram of per-objective losses
over the final training steps, one outline per variant.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from emer.domain import OBJECTIVES

PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f")
HIST_BINS = 30
HIST_LAST_STEPS = 500


def read_gauc_series(path) -> Dict[str, Dict[str, float]]:
    """``{series: {objective: gauc}}`` from a report CSV or an ablation table."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if header == ["objective", "metric", "value"]:
        vals = {r[0]: float(r[2]) for r in rows[1:] if r[1] == "gauc" and r[0] in OBJECTIVES}
        return {Path(path).stem: vals}
    if header and header[0] == "metric" and len(header) > 1:
        series: Dict[str, Dict[str, float]] = {name: {} for name in header[1:]}
        for r in rows[1:]:
            if r and r[0] in OBJECTIVES:
                for name, cell in zip(header[1:], r[1:]):
                    if cell:
                        series[name][r[0]] = float(cell)
        return series
    raise ValueError(f"{path}: neither an evaluation report nor an ablation table")


def _svg(width: int, height: int, body: List[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    )
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>\n"])


def _text(x, y, s, anchor="middle", size=11, extra="") -> str:
    return f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" font-size="{size}"{extra}>{escape(str(s))}</text>'


def _legend(names: Sequence[str], x: float, y: float) -> List[str]:
    out = []
    for i, name in enumerate(names):
        yy = y + 14 * i
        out.append(f'<rect x="{x:.1f}" y="{yy - 9:.1f}" width="10" height="10" fill="{PALETTE[i % len(PALETTE)]}"/>')
        out.append(_text(x + 14, yy, name, anchor="start"))
    return out


def bar_chart(series: Mapping[str, Mapping[str, float]], x0: float, y0: float, w: float, h: float) -> List[str]:
    """Grouped bars, one group per objective; the y axis spans [min - margin, 1]."""
    names = list(series)
    values = [v for s in series.values() for v in s.values()]
    if not values:
        raise ValueError("no per-objective GAUC values to plot")
    lo = max(0.0, np.floor((min(values) - 0.05) * 20) / 20)
    hi = 1.0
    body = [_text(x0 + w / 2, y0 - 8, "GAUC per objective", size=13)]
    body.append(f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="black"/>')
    body.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y0 + h}" stroke="black"/>')
    for t in np.linspace(lo, hi, 5):
        yy = y0 + h - (t - lo) / (hi - lo) * h
        body.append(f'<line x1="{x0 - 4}" y1="{yy:.1f}" x2="{x0 + w}" y2="{yy:.1f}" stroke="#ddd"/>')
        body.append(_text(x0 - 6, yy + 4, f"{t:.2f}", anchor="end"))
    group = w / len(OBJECTIVES)
    bar = group * 0.8 / max(len(names), 1)
    for j, obj in enumerate(OBJECTIVES):
        gx = x0 + j * group + group * 0.1
        for i, name in enumerate(names):
            v = series[name].get(obj)
            if v is None:
                continue
            bh = max(0.0, (v - lo) / (hi - lo) * h)
            body.append(
                f'<rect x="{gx + i * bar:.1f}" y="{y0 + h - bh:.1f}" width="{bar:.1f}" height="{bh:.1f}" '
                f'fill="{PALETTE[i % len(PALETTE)]}"><title>{escape(name)} {obj}: {v:.4f}</title></rect>'
            )
        body.append(_text(x0 + j * group + group / 2, y0 + h + 14, obj))
    return body + _legend(names, x0 + w + 12, y0 + 10)


def loss_histogram(losses: Mapping[str, np.ndarray], x0: float, y0: float, w: float, h: float) -> List[str]:
    """Step-outline histograms of pooled per-objective losses, shared bins."""
    names = list(losses)
    pooled = np.concatenate([np.ravel(v) for v in losses.values()])
    if pooled.size == 0:
        raise ValueError("no loss values to plot")
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        hi = lo + 1e-9
    edges = np.linspace(lo, hi, HIST_BINS + 1)
    dens = {n: np.histogram(np.ravel(v), bins=edges, density=True)[0] for n, v in losses.items()}
    top = max(float(d.max()) for d in dens.values()) or 1.0
    body = [_text(x0 + w / 2, y0 - 8, "Per-objective loss distribution", size=13)]
    body.append(f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="black"/>')
    body.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y0 + h}" stroke="black"/>')
    for t in np.linspace(lo, hi, 5):
        xx = x0 + (t - lo) / (hi - lo) * w
        body.append(_text(xx, y0 + h + 14, f"{t:.3f}"))
    body.append(_text(x0 + w / 2, y0 + h + 30, "loss"))
    for i, name in enumerate(names):
        pts = [(x0, y0 + h)]
        for b, d in enumerate(dens[name]):
            xa = x0 + (edges[b] - lo) / (hi - lo) * w
            xb = x0 + (edges[b + 1] - lo) / (hi - lo) * w
            yy = y0 + h - d / top * h
            pts += [(xa, yy), (xb, yy)]
        pts.append((x0 + w, y0 + h))
        path = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
        body.append(f'<polyline points="{path}" fill="none" stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5"/>')
    return body + _legend(names, x0 + w + 12, y0 + 10)


def final_losses(trace: Sequence[dict], last: int = HIST_LAST_STEPS) -> np.ndarray:
    rows = list(trace)[-last:]
    return np.array([[r[f"l_{o}"] for o in OBJECTIVES] for r in rows], dtype=np.float64)


def render(series: Mapping[str, Mapping[str, float]], losses: Optional[Mapping[str, np.ndarray]] = None) -> str:
    width, panel_h = 820, 260
    body = bar_chart(series, 60, 40, 600, panel_h - 60)
    height = panel_h + 20
    if losses:
        body += loss_histogram(losses, 60, panel_h + 60, 600, panel_h - 60)
        height = 2 * panel_h + 60
    return _svg(width, height, body)


def _parse_trace_arg(spec: str) -> Tuple[str, str]:
    name, sep, path = spec.partition("=")
    if not sep:
        return Path(spec).stem.replace(".trace", ""), spec
    if not name or not path:
        raise ValueError(f"trace must be NAME=PATH, got {spec!r}")
    return name, path


def plot_from_files(report, out, traces: Sequence[str] = ()) -> None:
    from emer.trainer import read_trace

    report = Path(report)
    if not report.is_file():
        raise FileNotFoundError(f"report not found: {report}")
    series = read_gauc_series(report)
    losses = {}
    for spec in traces:
        name, path = _parse_trace_arg(spec)
        if not Path(path).is_file():
            raise FileNotFoundError(f"trace not found: {path}")
        losses[name] = final_losses(read_trace(path))
    Path(out).write_text(render(series, losses), encoding="utf-8")
