"""Image-quality metrics, detection agreement, and the results table.

All metrics are pure functions. `render_report` emits one CSV and one
text table per dataset with per-column best flags; the perceptual metric
is a plugin boundary and renders as an unavailability marker when no
plugin is registered, never as a silent zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from docsr.core import BBox, check_image, rasterize_boxes, save_png, to_grayscale
from docsr.loss import task_l1

METRIC_UNAVAILABLE = "—"  # em dash marker for a metric with no provider

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over all channels jointly.

    Inputs are assumed clamped to [0, 1] (dynamic range 1.0). Returns
    the cap value 100.0 when the MSE vanishes below 1e-10.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b, "psnr")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse < 1e-10:
        return 100.0
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(r ** 2) / (2.0 * sigma * sigma))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def _windowed(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode correlation of a 2D image with a 2D kernel."""
    win = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window sigma 1.5, K1/K2 0.01/0.03,
    dynamic range 1.0. Three-channel inputs are reduced to grayscale
    first. Values can be negative (anti-correlated local structure).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b, "ssim")
    if a.ndim == 3 and a.shape[2] == 3:
        a, b = to_grayscale(a), to_grayscale(b)
    if a.ndim == 3 and a.shape[2] == 1:
        a, b = a[:, :, 0], b[:, :, 0]
    if a.ndim != 2:
        raise ValueError(f"ssim expects (H, W), (H, W, 1) or (H, W, 3), got {a.shape}")
    h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(
            f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_a = _windowed(a, kernel)
    mu_b = _windowed(b, kernel)
    var_a = _windowed(a * a, kernel) - mu_a ** 2
    var_b = _windowed(b * b, kernel) - mu_b ** 2
    cov = _windowed(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


class IdentityPerceptual:
    """Single-layer plugin whose feature space is the image itself.

    With unit weight the metric reduces to the mean squared pixel
    difference, which makes the plugin protocol testable without an
    external feature network.
    """

    name = "identity"
    weights = (1.0,)

    def layers(self, img: np.ndarray) -> list[np.ndarray]:
        return [np.asarray(img, dtype=np.float64)]


PERCEPTUAL_PLUGINS: dict[str, type] = {"identity": IdentityPerceptual}


def get_perceptual_plugin(name: str | None):
    """Instantiate a registered plugin; None when name is None or unknown
    (callers render the unavailability marker)."""
    if name is None:
        return None
    cls = PERCEPTUAL_PLUGINS.get(name)
    return cls() if cls is not None else None


def perceptual_distance(a: np.ndarray, b: np.ndarray, plugin) -> float:
    """Weighted sum over the plugin's feature layers of the mean squared
    layer difference."""
    if plugin is None:
        raise ValueError("perceptual metric unavailable: no plugin installed")
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b, "perceptual_distance")
    la, lb = plugin.layers(a), plugin.layers(b)
    if len(la) != len(lb) or len(la) != len(plugin.weights):
        raise ValueError("plugin returned inconsistent layer counts")
    total = 0.0
    for w, fa, fb in zip(plugin.weights, la, lb):
        _check_same_shape(fa, fb, "plugin layer")
        total += float(w) * float(np.mean((fa.astype(np.float64) - fb.astype(np.float64)) ** 2))
    return total


def box_iou(a: BBox, b: BBox) -> float:
    ix = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.width * a.height + b.width * b.height - inter
    return inter / union if union > 0 else 0.0


IOU_MODES = ("mask", "matched")


def detection_iou(boxes_sr: list[BBox], boxes_hr: list[BBox],
                  frame: tuple[int, int], mode: str = "mask") -> float:
    """Agreement between two detected box sets over a frame.

    mask (default): rasterize each set to a binary mask and take the
    pixel IoU; total-area faithful and well-defined for any box counts.
    matched: greedy one-to-one matching by descending pairwise box IoU;
    score is the matched-IoU sum divided by max(len(sr), len(hr)), so
    unmatched boxes on either side dilute it.

    Both sets empty counts as perfect agreement (1.0); exactly one empty
    is total disagreement (0.0).
    """
    h, w = frame
    if h <= 0 or w <= 0:
        raise ValueError(f"zero-area frame {frame}")
    if mode not in IOU_MODES:
        raise ValueError(f"iou mode must be one of {IOU_MODES}")
    if not boxes_sr and not boxes_hr:
        return 1.0
    if not boxes_sr or not boxes_hr:
        return 0.0
    if mode == "mask":
        m_sr = rasterize_boxes(boxes_sr, h, w)
        m_hr = rasterize_boxes(boxes_hr, h, w)
        union = np.logical_or(m_sr, m_hr).sum()
        if union == 0:  # every box clipped away on both sides: equal masks
            return 1.0
        return float(np.logical_and(m_sr, m_hr).sum() / union)
    pairs = sorted(((box_iou(p, g), i, j) for i, p in enumerate(boxes_sr)
                    for j, g in enumerate(boxes_hr)), key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    total = 0.0
    for iou, i, j in pairs:
        if iou <= 0.0:
            break
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        total += iou
    return total / max(len(boxes_sr), len(boxes_hr))


def feature_distance_report(det_sr, det_hr) -> tuple[float, float]:
    """Task-loss distances between two detections, scaled x100 for the
    results table. Reuses the training loss code path exactly."""
    deep = task_l1(det_sr.deep_features, det_hr.deep_features)
    out_sr = np.concatenate([det_sr.out_coords, det_sr.out_scores], axis=-1)
    out_hr = np.concatenate([det_hr.out_coords, det_hr.out_scores], axis=-1)
    out = task_l1(out_sr, out_hr)
    return float(deep) * 100.0, float(out) * 100.0


@dataclass(frozen=True)
class ReportRow:
    model: str
    losses: str
    psnr_db: float
    ssim: float
    lpips: float | None
    iou: float
    ctpn_deep_x100: float
    ctpn_out_x100: float


REPORT_COLUMNS = ("model", "losses", "psnr_db", "ssim", "lpips", "iou",
                  "ctpn_deep_x100", "ctpn_out_x100", "best_flags")

# metric -> (attribute, better) in table column order
_METRIC_SENSE = (("psnr_db", max), ("ssim", max), ("lpips", min), ("iou", max),
                 ("ctpn_deep_x100", min), ("ctpn_out_x100", min))


def best_flags(rows: list[ReportRow]) -> list[str]:
    """Per row, '+'-joined names of the metrics it wins (ties share)."""
    flags: list[list[str]] = [[] for _ in rows]
    for attr, better in _METRIC_SENSE:
        values = [getattr(r, attr) for r in rows]
        present = [v for v in values if v is not None]
        if not present:
            continue
        target = better(present)
        for i, v in enumerate(values):
            if v is not None and v == target:
                flags[i].append(attr)
    return ["+".join(f) for f in flags]


def _fmt(v: float | None) -> str:
    return METRIC_UNAVAILABLE if v is None else f"{v:.6f}"


def render_report(rows: list[ReportRow], dataset: str, report_dir) -> tuple[Path, Path]:
    """Write report/<dataset>.csv and .txt; returns both paths.

    Column order follows the results-table convention: PSNR, SSIM, LPIPS
    for image quality, then IoU, deep and output feature distances for
    detection agreement. Best value per metric is flagged (max for
    PSNR/SSIM/IoU, min for the rest). Empty rows give header-only files.
    """
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    csv_path = report_dir / f"{dataset}.csv"
    txt_path = report_dir / f"{dataset}.txt"
    flags = best_flags(rows)

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row, flag in zip(rows, flags):
            writer.writerow([row.model, row.losses, _fmt(row.psnr_db), _fmt(row.ssim),
                             _fmt(row.lpips), _fmt(row.iou), _fmt(row.ctpn_deep_x100),
                             _fmt(row.ctpn_out_x100), flag])

    headers = ["model", "losses", "PSNR", "SSIM", "LPIPS", "IoU",
               "CTPN-deep x100", "CTPN-out x100"]
    attrs = ("psnr_db", "ssim", "lpips", "iou", "ctpn_deep_x100", "ctpn_out_x100")
    cells = [headers]
    for row, flag in zip(rows, flags):
        marked = []
        for attr in attrs:
            text = _fmt(getattr(row, attr))
            if attr in flag.split("+"):
                text += "*"
            marked.append(text)
        cells.append([row.model, row.losses, *marked])
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = [f"dataset: {dataset}  (* = best per metric)"]
    for i, r in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    txt_path.write_text("\n".join(lines) + "\n")
    return csv_path, txt_path


def evaluate_model(model, pairs, backend, *, label: str, losses_desc: str,
                   plugin=None, iou_mode: str = "mask", identity_bypass: bool = False,
                   cache_root=None, panels_dir=None, log=None) -> ReportRow:
    """Super-resolve every pair, score it, and fold into one table row.

    Pixel metrics (PSNR/SSIM/perceptual) and the panels score the
    displayable image, clipped to [0, 1]. Detection boxes and feature
    distances run on the raw network output instead: that is the tensor
    the task losses train against, and a model whose output drifts out
    of range (the task-only failure mode) can carry text structure the
    clip would erase.

    identity_bypass substitutes sr := hr (testing hook: metrics must hit
    their perfect values). cache_root reuses the training-time target
    cache for the HR detections; panels_dir, when given, receives one
    LR | SR | HR panel PNG per sample.
    """
    from docsr import models as _models
    from docsr.detector import load_or_compute_targets

    if not pairs:
        raise ValueError("no evaluation pairs")
    say = log if log is not None else (lambda msg: None)
    if panels_dir is not None:
        panels_dir = Path(panels_dir)
        panels_dir.mkdir(parents=True, exist_ok=True)
    sums = {"psnr": 0.0, "ssim": 0.0, "lpips": 0.0, "iou": 0.0, "deep": 0.0, "out": 0.0}
    for pair in pairs:
        if identity_bypass:
            sr_raw = pair.hr
        else:
            sr_raw = _models.forward(model, pair.lr)
        sr = np.clip(sr_raw, 0.0, 1.0)
        frame = pair.hr.shape[:2]
        if cache_root is not None:
            det_hr = load_or_compute_targets(backend, pair.hr, pair.id, cache_root)
        else:
            det_hr = backend.detect(pair.hr)
        det_sr = backend.detect(sr_raw)
        sums["psnr"] += psnr(sr, pair.hr)
        sums["ssim"] += ssim(sr, pair.hr)
        if plugin is not None:
            sums["lpips"] += perceptual_distance(sr, pair.hr, plugin)
        sums["iou"] += detection_iou(det_sr.boxes, det_hr.boxes, frame, mode=iou_mode)
        deep, out = feature_distance_report(det_sr, det_hr)
        sums["deep"] += deep
        sums["out"] += out
        if panels_dir is not None:
            render_panel(pair.lr, sr, pair.hr, det_sr.boxes, det_hr.boxes,
                         panels_dir / f"{pair.id}.png")
    n = len(pairs)
    row = ReportRow(model=label, losses=losses_desc,
                    psnr_db=sums["psnr"] / n, ssim=sums["ssim"] / n,
                    lpips=(sums["lpips"] / n) if plugin is not None else None,
                    iou=sums["iou"] / n, ctpn_deep_x100=sums["deep"] / n,
                    ctpn_out_x100=sums["out"] / n)
    say(f"{label}: psnr={row.psnr_db:.2f}dB ssim={row.ssim:.4f} iou={row.iou:.4f} "
        f"deep={row.ctpn_deep_x100:.3f} out={row.ctpn_out_x100:.3f}")
    return row


def draw_boxes(img: np.ndarray, boxes: list[BBox], color) -> np.ndarray:
    """1px rectangle outlines, clipped to the frame; returns a copy."""
    out = np.array(img, dtype=np.float32, copy=True)
    h, w = out.shape[:2]
    col = np.asarray(color, dtype=np.float32)[: out.shape[2]]
    for b in boxes:
        x0, y0 = max(0, int(math.floor(b.x0))), max(0, int(math.floor(b.y0)))
        x1, y1 = min(w, int(math.ceil(b.x1))), min(h, int(math.ceil(b.y1)))
        if x1 <= x0 or y1 <= y0:
            continue
        out[y0, x0:x1] = col
        out[y1 - 1, x0:x1] = col
        out[y0:y1, x0] = col
        out[y0:y1, x1 - 1] = col
    return out


def render_panel(lr: np.ndarray, sr: np.ndarray, hr: np.ndarray,
                 boxes_sr: list[BBox], boxes_hr: list[BBox], path) -> None:
    """Side-by-side LR | SR | HR panel with detected boxes overlaid on
    the SR and HR panes (LR shown nearest-upscaled to HR size)."""
    check_image(sr, "sr")
    scale = hr.shape[0] // lr.shape[0]
    lr_big = np.repeat(np.repeat(lr, scale, axis=0), scale, axis=1)
    c = hr.shape[2]
    box_col = (1.0, 0.15, 0.15) if c == 3 else (0.0,)
    panes = [lr_big, draw_boxes(sr, boxes_sr, box_col), draw_boxes(hr, boxes_hr, box_col)]
    gutter = np.full((hr.shape[0], 2, c), 0.5, dtype=np.float32)
    strip = [panes[0]]
    for p in panes[1:]:
        strip.extend([gutter, p])
    save_png(path, np.clip(np.concatenate(strip, axis=1), 0.0, 1.0))
