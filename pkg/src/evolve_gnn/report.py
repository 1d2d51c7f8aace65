"""Per-task accuracy line charts as standalone SVG."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]
W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 150, 30, 50


def read_curves(csv_paths) -> dict:
    """Mean per-task accuracy per (dataset, model, variant).

    Accepts ablation CSVs (``variant`` column) and grid results CSVs, where
    every grid run counts as incremental.
    """
    acc = defaultdict(lambda: defaultdict(list))
    for path in csv_paths:
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                variant = row.get("variant") or "incremental"
                label = row["model"]
                if "history" in row and row.get("variant") is None:
                    label = f"{row['model']} c={row['history']} {row['restart']}"
                acc[(row["dataset"], label, variant)][int(row["t"])].append(float(row["acc_t"]))
    curves = defaultdict(dict)
    for (ds, label, variant), by_t in acc.items():
        ts = sorted(by_t)
        curves[ds][(label, variant)] = (ts, [sum(by_t[t]) / len(by_t[t]) for t in ts])
    return curves


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def line_chart(title: str, series: dict) -> str:
    """Render ``{(label, variant): (xs, ys)}`` with static runs solid and
    incremental runs dashed, one color per label."""
    xs_all = [x for xs, _ in series.values() for x in xs]
    x0, x1 = (min(xs_all), max(xs_all)) if xs_all else (0, 1)
    if x0 == x1:
        x1 = x0 + 1
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + (1.0 - y) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<path d="M{LEFT} {TOP} V{TOP + ph} H{LEFT + pw}" stroke="black" fill="none"/>',
    ]
    for i in range(6):
        y = i / 5
        out.append(f'<path d="M{LEFT - 4} {_fmt(sy(y))} H{LEFT + pw}" stroke="#ddd"/>')
        out.append(
            f'<text x="{LEFT - 8}" y="{_fmt(sy(y) + 4)}" text-anchor="end" font-family="sans-serif" font-size="11">{y:.1f}</text>'
        )
    for x in sorted(set(xs_all)):
        out.append(
            f'<text x="{_fmt(sx(x))}" y="{TOP + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="11">{x}</text>'
        )
    out.append(f'<text x="{LEFT + pw / 2}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">task time</text>')
    out.append(
        f'<text x="14" y="{TOP + ph / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {TOP + ph / 2})">accuracy</text>'
    )

    labels = sorted({label for label, _ in series})
    color = {label: PALETTE[i % len(PALETTE)] for i, label in enumerate(labels)}
    legend_y = TOP
    for (label, variant), (xs, ys) in sorted(series.items()):
        d = " ".join(f"{'M' if j == 0 else 'L'}{_fmt(sx(x))} {_fmt(sy(y))}" for j, (x, y) in enumerate(zip(xs, ys)))
        dash = ' stroke-dasharray="6 4"' if variant != "static" else ""
        out.append(f'<path d="{d}" stroke="{color[label]}" stroke-width="2" fill="none"{dash}/>')
        lx = LEFT + pw + 10
        out.append(f'<path d="M{lx} {legend_y} H{lx + 24}" stroke="{color[label]}" stroke-width="2"{dash}/>')
        out.append(
            f'<text x="{lx + 30}" y="{legend_y + 4}" font-family="sans-serif" font-size="11">{escape(f"{label} {variant}")}</text>'
        )
        legend_y += 16
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(csv_paths, out_dir) -> list[Path]:
    """One SVG per dataset; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for ds, series in sorted(read_curves(csv_paths).items()):
        p = out / f"{ds}.svg"
        p.write_text(line_chart(ds, series), encoding="utf-8")
        written.append(p)
    return written
