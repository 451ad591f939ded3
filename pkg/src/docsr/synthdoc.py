"""Synthetic document generator: random text lines on a paper-like page.

Stands in for scanned-document corpora in desk-scale experiments. The
glyphs come from a procedural 5x7 bitmap font bundled below (no system
font dependency), scaled by integer factors, dark ink on a light
background. Everything is drawn from one seeded generator, so a seed maps
to exactly one page, box list and placement log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from docsr.core import BBox, derive_rng

# 5x7 bitmap font, one 5-bit row mask per glyph row, top to bottom.
FONT_5X7: dict[str, tuple[int, ...]] = {
    "A": (0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001),
    "B": (0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110),
    "C": (0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110),
    "D": (0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100),
    "E": (0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111),
    "F": (0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000),
    "G": (0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111),
    "H": (0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001),
    "I": (0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110),
    "J": (0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100),
    "K": (0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001),
    "L": (0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111),
    "M": (0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001),
    "N": (0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001),
    "O": (0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110),
    "P": (0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000),
    "Q": (0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101),
    "R": (0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001),
    "S": (0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110),
    "T": (0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100),
    "U": (0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110),
    "V": (0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100),
    "W": (0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010),
    "X": (0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001),
    "Y": (0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100),
    "Z": (0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111),
    "0": (0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110),
    "1": (0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110),
    "2": (0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111),
    "3": (0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110),
    "4": (0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010),
    "5": (0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110),
    "6": (0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110),
    "7": (0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000),
    "8": (0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110),
    "9": (0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100),
    ".": (0, 0, 0, 0, 0, 0b00110, 0b00110),
    "-": (0, 0, 0, 0b11111, 0, 0, 0),
}

GLYPH_H, GLYPH_W = 7, 5
_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_ALPHABET = _LETTERS + _LETTERS + "0123456789"  # letters twice as likely


def glyph_bitmap(ch: str) -> np.ndarray:
    rows = FONT_5X7[ch]
    return np.array([[(r >> (GLYPH_W - 1 - c)) & 1 for c in range(GLYPH_W)] for r in rows],
                    dtype=np.float32)


@dataclass
class LinePlacement:
    """One rendered line of the generator's placement log."""

    text: str
    scale: int
    box: BBox
    ink: float


def _random_text(rng: np.random.Generator, n_chars: int) -> str:
    chars = []
    for i in range(n_chars):
        can_space = 0 < i < n_chars - 1 and chars[-1] != " "
        if can_space and rng.random() < 0.15:
            chars.append(" ")
        else:
            chars.append(_ALPHABET[rng.integers(0, len(_ALPHABET))])
    return "".join(chars)


def _render_line(canvas: np.ndarray, text: str, x0: int, y0: int, scale: int,
                 ink: np.ndarray) -> int:
    """Blit text; returns x just past the last inked column."""
    x = x0
    x_end = x0
    for ch in text:
        if ch != " ":
            g = np.kron(glyph_bitmap(ch), np.ones((scale, scale), dtype=np.float32))
            h, w = g.shape
            region = canvas[y0:y0 + h, x:x + w]
            mask = g[..., None] > 0
            np.copyto(region, np.broadcast_to(ink, region.shape), where=mask)
            x_end = x + w
        x += (GLYPH_W + 1) * scale
    return x_end


def generate_synthetic_document(seed: int, size: tuple[int, int] = (96, 128),
                                n_lines: int | None = None, channels: int = 3,
                                return_log: bool = False):
    """Render a page. Returns (image, boxes) or (image, boxes, log).

    With an explicit n_lines the generator renders exactly that many lines
    or raises if they cannot fit; otherwise the count is seed-dependent.
    """
    h, w = size
    if h < 64 or w < 64:
        raise ValueError("page must be at least 64x64")
    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    rng = derive_rng(seed, "synthdoc")

    base = rng.uniform(0.80, 0.93)
    tint = rng.uniform(-0.02, 0.02, size=channels)
    gx, gy = rng.uniform(-0.04, 0.04, size=2)
    yy, xx = np.mgrid[0:h, 0:w]
    page = base + tint[None, None, :] + (gx * xx / w + gy * yy / h)[..., None]
    page = page + rng.normal(0.0, 0.008, size=(h, w, 1))
    page = np.clip(page, 0.0, 1.0).astype(np.float32)

    margin = 3
    target = int(n_lines) if n_lines is not None else int(rng.integers(2, 7))
    boxes: list[BBox] = []
    log: list[LinePlacement] = []
    y = margin
    for _ in range(target):
        scale = int(rng.integers(2, 5))
        if y + GLYPH_H * scale + margin > h:
            scale = 2  # fall back to the smallest size before giving up
        line_h = GLYPH_H * scale
        if y + line_h + margin > h:
            if n_lines is not None:
                raise ValueError(f"cannot fit {n_lines} lines on a {h}x{w} page")
            break
        y += int(rng.integers(0, max(2, scale * 2)))  # jitter downward
        if y + line_h + margin > h:
            if n_lines is not None:
                raise ValueError(f"cannot fit {n_lines} lines on a {h}x{w} page")
            break

        x0 = margin + int(rng.integers(0, max(1, w // 8)))
        max_chars = (w - margin - x0 + scale) // ((GLYPH_W + 1) * scale)
        if max_chars < 3:
            x0 = margin
            max_chars = (w - margin - x0 + scale) // ((GLYPH_W + 1) * scale)
        n_chars = int(rng.integers(min(4, max_chars), max_chars + 1))
        text = _random_text(rng, n_chars)

        ink_level = rng.uniform(0.03, 0.22)
        ink = np.clip(ink_level + rng.uniform(-0.02, 0.02, size=channels), 0.0, 1.0)
        ink = ink.astype(np.float32)
        x_end = _render_line(page, text, x0, y, scale, ink)

        box = BBox(float(x0), float(y), float(x_end), float(y + line_h))
        boxes.append(box)
        log.append(LinePlacement(text=text, scale=scale, box=box, ink=float(ink_level)))
        y += line_h + int(rng.integers(2, 3 + scale * 2))

    if return_log:
        return page, boxes, log
    return page, boxes
