"""Loss and weight curve rendering from a run's metrics.csv.

Charts are rasterized directly into numpy canvases and written through
the package PNG writer, so a given metrics.csv always reproduces the
same bytes. The weight chart comes with a companion CSV recording the
per-epoch weight sum, which this module asserts equals the number of
enabled components before it draws anything.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from docsr.core import save_png
from docsr.synthdoc import GLYPH_H, GLYPH_W, glyph_bitmap
from docsr.train import read_metrics

_PALETTE = (
    (0.80, 0.22, 0.20),
    (0.16, 0.44, 0.80),
    (0.18, 0.62, 0.30),
    (0.85, 0.55, 0.10),
    (0.55, 0.30, 0.75),
    (0.10, 0.60, 0.60),
)

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 56, 12, 26, 30


def _draw_text(canvas: np.ndarray, x: int, y: int, text: str, color) -> None:
    col = np.asarray(color, dtype=np.float32)
    for ch in text.upper():
        if ch != " ":
            try:
                g = glyph_bitmap(ch)
            except KeyError:
                g = glyph_bitmap("-")
            y1, x1 = min(y + GLYPH_H, canvas.shape[0]), min(x + GLYPH_W, canvas.shape[1])
            if y1 > y and x1 > x:
                patch = canvas[y:y1, x:x1]
                mask = g[: y1 - y, : x1 - x].astype(bool)
                patch[mask] = col
        x += GLYPH_W + 1


def _draw_segment(canvas: np.ndarray, p0, p1, color) -> None:
    col = np.asarray(color, dtype=np.float32)
    n = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) + 1
    xs = np.rint(np.linspace(p0[0], p1[0], n)).astype(int)
    ys = np.rint(np.linspace(p0[1], p1[1], n)).astype(int)
    ok = (ys >= 0) & (ys < canvas.shape[0]) & (xs >= 0) & (xs < canvas.shape[1])
    canvas[ys[ok], xs[ok]] = col


def plot_curves(series: dict[str, list[tuple[float, float]]], title: str,
                path, y_floor: float | None = None) -> None:
    """Render named (x, y) polylines to a PNG line chart.

    Series are drawn in sorted-name order with a fixed palette, so the
    output is a pure function of the inputs.
    """
    canvas = np.ones((HEIGHT, WIDTH, 3), dtype=np.float32)
    names = sorted(series)
    xs = [x for n in names for x, _ in series[n]]
    ys = [y for n in names for _, y in series[n]]
    if not xs:
        raise ValueError("nothing to plot: no data points")
    x_min, x_max = min(xs), max(xs)
    y_min, y_max = min(ys), max(ys)
    if y_floor is not None:
        y_min = min(y_min, y_floor)
    if x_max == x_min:
        x_max = x_min + 1.0
    pad = (y_max - y_min) * 0.05 or max(abs(y_max), 1.0) * 0.05
    y_min, y_max = y_min - pad, y_max + pad

    px0, px1 = MARGIN_L, WIDTH - MARGIN_R
    py0, py1 = HEIGHT - MARGIN_B, MARGIN_T  # y axis points up

    def to_px(x, y):
        fx = (x - x_min) / (x_max - x_min)
        fy = (y - y_min) / (y_max - y_min)
        return (px0 + fx * (px1 - px0), py0 + fy * (py1 - py0))

    axis_col = (0.25, 0.25, 0.25)
    _draw_segment(canvas, (px0, py0), (px1, py0), axis_col)
    _draw_segment(canvas, (px0, py0), (px0, py1), axis_col)
    _draw_text(canvas, px0, 8, title, axis_col)
    _draw_text(canvas, px0 - 6, py0 + 8, f"{x_min:g}", axis_col)
    tail = f"{x_max:g}"
    _draw_text(canvas, px1 - len(tail) * (GLYPH_W + 1), py0 + 8, tail, axis_col)
    for val, py in ((y_min, py0), (y_max, py1)):
        label = f"{val:.3g}"
        _draw_text(canvas, max(0, px0 - 8 - len(label) * (GLYPH_W + 1)),
                   py - GLYPH_H // 2, label, axis_col)

    legend_x = px0 + 80
    for i, name in enumerate(names):
        color = _PALETTE[i % len(_PALETTE)]
        pts = [to_px(x, y) for x, y in series[name]]
        for a, b in zip(pts, pts[1:]):
            _draw_segment(canvas, a, b, color)
        if len(pts) == 1:
            _draw_segment(canvas, pts[0], pts[0], color)
        canvas[12:16, legend_x:legend_x + 10] = color
        _draw_text(canvas, legend_x + 14, 10, name, axis_col)
        legend_x += 14 + (len(name) + 2) * (GLYPH_W + 1) + 10
    save_png(path, canvas)


def plot_metrics(metrics_csv, out_dir) -> dict[str, Path]:
    """Loss and weight curves plus the weight-sum companion CSV.

    Asserts the DWA normalization on the data before drawing: at every
    epoch the recorded weights must sum to the component count within
    1e-9.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_metrics(metrics_csv)
    if not rows:
        raise ValueError(f"{metrics_csv}: no data rows")
    components = sorted({r["component"] for r in rows})
    epochs = sorted({r["epoch"] for r in rows})
    raw = {c: [] for c in components}
    weight = {c: [] for c in components}
    by_key = {(r["epoch"], r["component"]): r for r in rows}
    sums = []
    for e in epochs:
        total = 0.0
        for c in components:
            r = by_key.get((e, c))
            if r is None:
                raise ValueError(f"{metrics_csv}: epoch {e} missing component {c!r}")
            raw[c].append((e, r["raw_value"]))
            weight[c].append((e, r["weight"]))
            total += r["weight"]
        if abs(total - len(components)) > 1e-9:
            raise ValueError(
                f"{metrics_csv}: epoch {e} weights sum to {total!r}, "
                f"expected {len(components)} (one per component)")
        sums.append((e, total))

    paths = {
        "loss": out_dir / "loss_curves.png",
        "weights": out_dir / "weight_curves.png",
        "weight_sums": out_dir / "weight_sums.csv",
    }
    plot_curves(raw, "raw loss per component", paths["loss"], y_floor=0.0)
    plot_curves(weight, "dwa weight per component", paths["weights"], y_floor=0.0)
    with open(paths["weight_sums"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "weight_sum", "n_components"])
        for e, total in sums:
            writer.writerow([e, repr(total), len(components)])
    return paths
