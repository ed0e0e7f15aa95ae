"""Metrics and reporting: codebook usage, reconstruction error, parameter
counts, and sweep summaries (JSON / CSV / static SVG charts)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .fsq import LevelsSpec
from .vq import VqCodebook


@dataclass
class UsageReport:
    """Exact code-frequency census over a token stream."""

    codebook_size: int
    used_count: int
    usage_fraction: float
    histogram: np.ndarray

    def merge(self, other: "UsageReport") -> "UsageReport":
        if other.codebook_size != self.codebook_size:
            raise ValueError("cannot merge usage reports over different codebooks")
        hist = self.histogram + other.histogram
        used = int((hist > 0).sum())
        return UsageReport(self.codebook_size, used, used / self.codebook_size, hist)


def codebook_usage(tokens, codebook_size: int) -> UsageReport:
    """Distinct-count and histogram of a token stream; usage is the fraction
    of codes seen at least once."""
    if codebook_size < 1:
        raise ValueError("codebook_size must be >= 1")
    tokens = np.asarray(tokens).reshape(-1)
    if tokens.size == 0:
        return UsageReport(codebook_size, 0, 0.0, np.zeros(codebook_size, dtype=np.int64))
    if int(tokens.min()) < 0 or int(tokens.max()) >= codebook_size:
        raise ValueError(
            f"token out of range [0, {codebook_size}): "
            f"min {int(tokens.min())}, max {int(tokens.max())}")
    hist = np.bincount(tokens, minlength=codebook_size).astype(np.int64)
    used = int((hist > 0).sum())
    return UsageReport(codebook_size, used, used / codebook_size, hist)


def reconstruction_error(x, x_hat) -> dict:
    """{"mse", "rmse"} between same-shaped arrays."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    mse = float(np.mean((x - x_hat) ** 2))
    return {"mse": mse, "rmse": float(np.sqrt(mse))}


def parameter_count(model) -> tuple[int, list[tuple[str, int]]]:
    """Total learnable parameters with a per-layer breakdown.

    A VQ codebook contributes |C| * d; an FSQ spec contributes 0 (its codebook
    is implicit).  Anything exposing ``parameter_breakdown()`` is summed as-is.
    """
    if isinstance(model, LevelsSpec):
        breakdown = [("fsq_bottleneck", 0)]
    elif isinstance(model, VqCodebook):
        breakdown = [("vq_codebook", model.parameter_count())]
    elif hasattr(model, "parameter_breakdown"):
        breakdown = list(model.parameter_breakdown())
    else:
        raise TypeError(f"cannot count parameters of {type(model).__name__}")
    return sum(count for _, count in breakdown), breakdown


METRICS = ("final_mse", "usage", "cost_bits_per_token", "total_params")


def report(results) -> dict:
    """Aggregate sweep results into per-metric series keyed by
    (quantizer, codebook_size): median over seeds with a min/max band,
    sorted by codebook size ascending."""
    results = list(results)
    if not results:
        raise ValueError("no results to report")
    by_cell: dict = {}
    for r in results:
        by_cell.setdefault((r.quantizer, r.codebook_size), []).append(r)
    out = {metric: [] for metric in METRICS}
    for (quantizer, size) in sorted(by_cell, key=lambda k: (k[0], k[1])):
        cell = by_cell[(quantizer, size)]
        for metric in METRICS:
            values = [float(getattr(r, metric)) for r in cell]
            out[metric].append({
                "quantizer": quantizer,
                "codebook_size": size,
                "median": float(np.median(values)),
                "min": min(values),
                "max": max(values),
                "seeds": len(values),
            })
    return {"metrics": out}


def report_to_json(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True) + "\n"


def series_to_csv(rep: dict, metric: str) -> str:
    lines = ["quantizer,codebook_size,median,min,max"]
    for row in rep["metrics"][metric]:
        lines.append(f"{row['quantizer']},{row['codebook_size']},"
                     f"{row['median']!r},{row['min']!r},{row['max']!r}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# minimal static SVG line charts

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return list(np.linspace(lo, hi, n))


def svg_line_chart(series: list[dict], title: str, xlabel: str, ylabel: str,
                   logx: bool = True, width: int = 640, height: int = 440) -> str:
    """Render named (xs, ys) series as an SVG line chart with axes and legend.

    Each series dict: {"name", "xs", "ys"}; x values are plotted on a log2
    axis by default (codebook sizes).
    """
    left, right, top, bottom = 70, 20, 40, 60
    pw, ph = width - left - right, height - top - bottom
    xs_all = np.concatenate([np.asarray(s["xs"], dtype=np.float64) for s in series])
    ys_all = np.concatenate([np.asarray(s["ys"], dtype=np.float64) for s in series])
    tx = np.log2 if logx else (lambda v: v)
    x_lo, x_hi = float(tx(xs_all).min()), float(tx(xs_all).max())
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if x_hi == x_lo:
        x_hi += 1.0
    if y_hi == y_lo:
        y_hi += 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x):
        return left + (tx(x) - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + ph - (y - y_lo) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" '
        'stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{ylabel}</text>',
    ]
    for xt in sorted(set(float(v) for v in xs_all)):
        parts.append(
            f'<text x="{px(xt):.1f}" y="{top + ph + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{int(xt)}</text>')
    for yt in _ticks(y_lo, y_hi):
        parts.append(
            f'<line x1="{left - 4}" y1="{py(yt):.1f}" x2="{left}" y2="{py(yt):.1f}" '
            'stroke="black"/>')
        parts.append(
            f'<text x="{left - 8}" y="{py(yt) + 3:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{yt:.4g}</text>')
    for i, s in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(s["xs"], s["ys"]))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        for x, y in zip(s["xs"], s["ys"]):
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="2.5" '
                         f'fill="{color}"/>')
        ly = top + 14 + 16 * i
        parts.append(f'<line x1="{left + pw - 110}" y1="{ly}" x2="{left + pw - 90}" '
                     f'y2="{ly}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{left + pw - 84}" y="{ly + 4}" '
                     f'font-family="sans-serif" font-size="11">{s["name"]}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def chart_from_report(rep: dict, metric: str, title: str, ylabel: str) -> str:
    rows = rep["metrics"][metric]
    series: dict[str, dict] = {}
    for row in rows:
        s = series.setdefault(row["quantizer"], {"name": row["quantizer"],
                                                 "xs": [], "ys": []})
        s["xs"].append(row["codebook_size"])
        s["ys"].append(row["median"])
    return svg_line_chart(list(series.values()), title, "codebook size", ylabel)
