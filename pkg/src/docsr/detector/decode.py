"""Anchor decoding and proposal linking for the text detectors.

Channel layout of the 20-channel taps, for k=10 anchor heights per
position: out_coords[..., 2a] is the vertical center offset dy (in
anchor-height units) and out_coords[..., 2a+1] the log height ratio dh;
out_scores[..., 2a] / [..., 2a+1] are the non-text / text confidences
after the squashing nonlinearity.
"""

from __future__ import annotations

import numpy as np

from docsr.core import BBox


def vertical_iou(a0: float, a1: float, b0: float, b1: float) -> float:
    """IoU of two vertical intervals [a0,a1], [b0,b1]."""
    overlap = min(a1, b1) - max(a0, b0)
    if overlap <= 0.0:
        return 0.0
    union = (a1 - a0) + (b1 - b0) - overlap
    return overlap / union


def decode_proposals(out_coords: np.ndarray, out_scores: np.ndarray, threshold: float,
                     stride: int, anchor_heights: tuple[float, ...],
                     image_size: tuple[int, int] | None = None) -> list[tuple]:
    """Threshold and decode per-position anchors to vertical strips.

    Returns (col, y0, y1, score) tuples; strips run from col*stride to
    (col+1)*stride horizontally. With image_size=(H, W), strips are
    clipped vertically and degenerate ones dropped.
    """
    gh, gw, cc = out_coords.shape
    if out_scores.shape != (gh, gw, cc) or cc != 2 * len(anchor_heights):
        raise ValueError(f"tap shapes {out_coords.shape}/{out_scores.shape} do not match "
                         f"{len(anchor_heights)} anchors")
    strips = []
    for r in range(gh):
        cy0 = (r + 0.5) * stride
        for c in range(gw):
            for a, ha in enumerate(anchor_heights):
                p = float(out_scores[r, c, 2 * a + 1])
                if p < threshold:
                    continue
                cy = cy0 + float(out_coords[r, c, 2 * a]) * ha
                h = ha * float(np.exp(np.clip(out_coords[r, c, 2 * a + 1], -6.0, 6.0)))
                y0, y1 = cy - h / 2.0, cy + h / 2.0
                if image_size is not None:
                    y0, y1 = max(0.0, y0), min(float(image_size[0]), y1)
                    if y1 - y0 < 1.0:
                        continue
                strips.append((c, y0, y1, p))
    return strips


def _column_nms(strips: list[tuple], nms_iou: float) -> list[tuple]:
    """Within each column keep the best strips, greedily by score."""
    by_col: dict[int, list[tuple]] = {}
    for s in strips:
        by_col.setdefault(s[0], []).append(s)
    kept = []
    for col in sorted(by_col):
        cand = sorted(by_col[col], key=lambda s: (-s[3], s[1]))
        chosen: list[tuple] = []
        for s in cand:
            if all(vertical_iou(s[1], s[2], k[1], k[2]) < nms_iou for k in chosen):
                chosen.append(s)
        kept.extend(chosen)
    return kept


def link_strips(strips: list[tuple], stride: int, link_iou: float = 0.7,
                max_gap: int = 2) -> list[tuple[BBox, float]]:
    """Group strips into text lines by connected components.

    Two strips are connected when their columns are at most max_gap apart
    and their vertical IoU is at least link_iou. Component box spans the
    member columns and the union of their vertical extents; confidence is
    the member mean.
    """
    n = len(strips)
    adj = [[] for _ in range(n)]
    for i in range(n):
        ci, y0i, y1i, _ = strips[i]
        for j in range(i + 1, n):
            cj, y0j, y1j, _ = strips[j]
            if abs(ci - cj) <= max_gap and vertical_iou(y0i, y1i, y0j, y1j) >= link_iou:
                adj[i].append(j)
                adj[j].append(i)
    seen = [False] * n
    lines = []
    for i in range(n):
        if seen[i]:
            continue
        stack, comp = [i], []
        seen[i] = True
        while stack:
            k = stack.pop()
            comp.append(k)
            for m in adj[k]:
                if not seen[m]:
                    seen[m] = True
                    stack.append(m)
        cols = [strips[k][0] for k in comp]
        box = BBox(min(cols) * float(stride),
                   min(strips[k][1] for k in comp),
                   (max(cols) + 1) * float(stride),
                   max(strips[k][2] for k in comp))
        conf = float(np.mean([strips[k][3] for k in comp]))
        lines.append((box, conf))
    lines.sort(key=lambda bc: (bc[0].y0, bc[0].x0))
    return lines


def decode_boxes(out_coords: np.ndarray, out_scores: np.ndarray, threshold: float, *,
                 stride: int, anchor_heights: tuple[float, ...],
                 nms_iou: float = 0.5, link_iou: float = 0.7, max_gap: int = 2,
                 image_size: tuple[int, int] | None = None) -> tuple[list[BBox], list[float]]:
    """Full decode: threshold, per-column NMS, link into line boxes.

    Pure function of its inputs; returns (boxes, confidences) sorted by
    (y0, x0).
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    strips = decode_proposals(out_coords, out_scores, threshold, stride, anchor_heights,
                              image_size=image_size)
    strips = _column_nms(strips, nms_iou)
    lines = link_strips(strips, stride, link_iou=link_iou, max_gap=max_gap)
    if image_size is not None:
        h, w = image_size
        lines = [(box.clip(h, w), conf) for box, conf in lines]
    boxes = [b for b, _ in lines]
    confs = [c for _, c in lines]
    return boxes, confs
