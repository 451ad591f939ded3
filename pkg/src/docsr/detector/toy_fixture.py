"""Training for the toy detector fixture.

The toy backend ships as a checkpoint trained once, here, on the
synthetic document generator. Anchors are assigned per column the usual
way: an anchor whose strip center falls inside a ground-truth line is
positive when its vertical IoU clears pos_iou (the best anchor per
column and line is always positive), negative below neg_iou, ignored in
between. Scores learn balanced binary cross-entropy on the text and
non-text channels; positives additionally regress (dy, dh) with L1.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from docsr.core import BBox, derive_rng, rasterize_boxes
from docsr.detector.backends import (DetectorBackend, ToyDetector, build_detector,
                                     load_detector, save_detector, toy_tap_forward)
from docsr.detector.decode import vertical_iou
from docsr.nn.autodiff import Var, constant
from docsr.nn.ops import absolute, add, add_const, log, mul_const, sum_all
from docsr.nn.optim import Adam, clip_global_norm
from docsr.synthdoc import generate_synthetic_document

FIXTURE_PATH = Path(__file__).parent / "fixtures" / "toy_detector.ckpt"


def anchor_assignment(boxes: list[BBox], gh: int, gw: int, stride: int,
                      anchors: tuple[float, ...], pos_iou: float = 0.6,
                      neg_iou: float = 0.6):
    """Per-anchor targets for one page.

    Returns CHW arrays (2k channels): score targets/mask, coord
    targets/mask, and the channel mask of positive anchors. With
    neg_iou == pos_iou there is no ignore band: every anchor that is not
    positive is negative. An ignore band leaves those anchors free to
    fire at detect time, which floods pages with fragment boxes.
    """
    k = len(anchors)
    t_score = np.zeros((2 * k, gh, gw), dtype=np.float32)
    m_score = np.zeros((2 * k, gh, gw), dtype=np.float32)
    t_coord = np.zeros((2 * k, gh, gw), dtype=np.float32)
    m_coord = np.zeros((2 * k, gh, gw), dtype=np.float32)
    pos = np.zeros((2 * k, gh, gw), dtype=np.float32)

    def set_negative(r, c, a):
        t_score[2 * a, r, c] = 1.0
        t_score[2 * a + 1, r, c] = 0.0
        m_score[2 * a:2 * a + 2, r, c] = 1.0
        pos[2 * a:2 * a + 2, r, c] = 0.0

    def set_positive(r, c, a, gt: BBox):
        cy = (r + 0.5) * stride
        cyg = (gt.y0 + gt.y1) / 2.0
        t_score[2 * a, r, c] = 0.0
        t_score[2 * a + 1, r, c] = 1.0
        m_score[2 * a:2 * a + 2, r, c] = 1.0
        pos[2 * a:2 * a + 2, r, c] = 1.0
        t_coord[2 * a, r, c] = (cyg - cy) / anchors[a]
        t_coord[2 * a + 1, r, c] = np.log(gt.height / anchors[a])
        m_coord[2 * a:2 * a + 2, r, c] = 1.0

    for c in range(gw):
        xc = (c + 0.5) * stride
        cover = [b for b in boxes if b.x0 <= xc < b.x1]
        best_per_gt = {id(b): (-1.0, None) for b in cover}
        for r in range(gh):
            cy = (r + 0.5) * stride
            for a, ha in enumerate(anchors):
                a0, a1 = cy - ha / 2.0, cy + ha / 2.0
                vi, gt = 0.0, None
                for b in cover:
                    v = vertical_iou(a0, a1, b.y0, b.y1)
                    if v > vi:
                        vi, gt = v, b
                    if v > best_per_gt[id(b)][0]:
                        best_per_gt[id(b)] = (v, (r, a, b))
                if gt is not None and vi >= pos_iou:
                    set_positive(r, c, a, gt)
                elif vi < neg_iou:
                    set_negative(r, c, a)
                # else: ambiguous, no loss
        for _, hit in best_per_gt.values():
            if hit is not None:
                r, a, b = hit
                set_positive(r, c, a, b)
    return t_score, m_score, t_coord, m_coord, pos


def detection_loss(coords: Var, scores: Var, batch_targets: dict,
                   lambda_coord: float = 1.0, eps: float = 1e-6) -> Var:
    """Balanced BCE on post-sigmoid scores plus L1 on positive coords."""
    t, m, tc, mc, pos = (batch_targets[k] for k in
                         ("t_score", "m_score", "t_coord", "m_coord", "pos"))
    w_pos, w_neg = pos.sum(), (m - pos).sum()
    weights = np.zeros_like(m)
    if w_pos > 0 and w_neg > 0:
        weights = 0.5 * pos / w_pos + 0.5 * (m - pos) / w_neg
    elif m.sum() > 0:
        weights = m / m.sum()

    ps = add_const(mul_const(scores, 1.0 - 2.0 * eps), eps)
    nll = add(mul_const(log(ps), -(t * weights)),
              mul_const(log(add_const(mul_const(ps, -1.0), 1.0)), -((1.0 - t) * weights)))
    loss = sum_all(nll)
    if mc.sum() > 0:
        diff = absolute(add_const(coords, -tc))
        loss = add(loss, mul_const(sum_all(mul_const(diff, mc / mc.sum())), lambda_coord))
    return loss


def _page_batch(rng_seed: int, n_pages: int, size, channels: int, blank_every: int = 6):
    """Deterministic page set; every blank_every-th page has no text."""
    pages, all_boxes = [], []
    for i in range(n_pages):
        n_lines = 0 if blank_every and i % blank_every == blank_every - 1 else None
        img, boxes = generate_synthetic_document(rng_seed * 100003 + i, size=size,
                                                 n_lines=n_lines, channels=channels)
        pages.append(img.transpose(2, 0, 1))
        all_boxes.append(boxes)
    return np.stack(pages).astype(np.float32), all_boxes


def _stack_targets(boxes_list, gh, gw, stride, anchors):
    keys = ("t_score", "m_score", "t_coord", "m_coord", "pos")
    per = [anchor_assignment(b, gh, gw, stride, anchors) for b in boxes_list]
    return {k: np.stack([p[i] for p in per]) for i, k in enumerate(keys)}


def train_toy_detector(seed: int = 0, channels: int = 3, n_pages: int = 96,
                       page_size: tuple[int, int] = (64, 96), epochs: int = 60,
                       batch_size: int = 8, lr: float = 1e-3,
                       log=None) -> tuple[DetectorBackend, list[float]]:
    """Train the fixture net; returns (frozen backend, per-epoch losses)."""
    proto = build_detector("toy", channels=channels, seed=seed)
    stride, anchors = proto.spec.stride, proto.anchor_heights
    params = {k: Var(v.copy(), requires_grad=True, name=k) for k, v in proto.params.items()}

    images, boxes_list = _page_batch(seed, n_pages, page_size, channels)
    gh, gw = page_size[0] // stride, page_size[1] // stride
    targets = _stack_targets(boxes_list, gh, gw, stride, anchors)

    opt = Adam(params, lr=lr)
    order_rng = derive_rng(seed, "toy-detector-train")
    history = []
    for epoch in range(epochs):
        order = order_rng.permutation(n_pages)
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, n_pages, batch_size):
            idx = order[lo:lo + batch_size]
            x = constant(images[idx])
            _, coords, scores = toy_tap_forward(params, x)
            bt = {k: v[idx] for k, v in targets.items()}
            loss = detection_loss(coords, scores, bt)
            opt.zero_grad()
            loss.backward()
            clip_global_norm(params, 5.0)
            opt.step()
            epoch_loss += float(loss.data)
            n_batches += 1
        history.append(epoch_loss / n_batches)
        if log:
            log(f"epoch {epoch + 1}/{epochs} loss {history[-1]:.4f}")

    backend = build_detector("toy", channels=channels,
                             params={k: v.data for k, v in params.items()})
    return backend, history


def fixture_quality(backend: DetectorBackend, seeds, size=(64, 96), channels: int = 3) -> dict:
    """Held-out detection quality: mean mask IoU on text pages and the
    total box count over blank pages (should be zero)."""
    ious, blank_boxes = [], 0
    for s in seeds:
        img, gt = generate_synthetic_document(s, size=size, channels=channels)
        det = backend.detect(img)
        a = rasterize_boxes(det.boxes, *size)
        b = rasterize_boxes(gt, *size)
        union = np.logical_or(a, b).sum()
        ious.append(float(np.logical_and(a, b).sum() / union) if union else 1.0)
        blank, _ = generate_synthetic_document(s + 7777, size=size, n_lines=0,
                                               channels=channels)
        blank_boxes += len(backend.detect(blank).boxes)
    return {"mean_iou": float(np.mean(ious)), "blank_boxes": blank_boxes}


def load_toy_fixture() -> DetectorBackend:
    """The committed fixture checkpoint, frozen and ready to use."""
    if not FIXTURE_PATH.exists():
        raise FileNotFoundError(f"{FIXTURE_PATH} missing; run scripts/train_toy_detector.py")
    return load_detector(FIXTURE_PATH)


def save_toy_fixture(backend: DetectorBackend) -> None:
    save_detector(FIXTURE_PATH, backend)
