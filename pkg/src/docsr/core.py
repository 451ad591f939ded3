"""Shared image types and conventions.

Images are numpy float arrays of shape (H, W, C) with C in {1, 3} and
values in [0, 1]. 8-bit PNG files are divided by 255 on load and written
back with half-up rounding. Grayscale conversion uses the BT.601 weights.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# BT.601 luminance weights.
_LUMA = np.array([0.299, 0.587, 0.114])

DEFAULT_SCALE = 4


class LossComponentId(enum.Enum):
    """The four components of the composite training objective."""

    L2_HR = "l2_hr"
    L2_LR = "l2_lr"
    TASK_DEEP = "task_deep"
    TASK_OUT = "task_out"

    def __str__(self):
        return self.value


IMAGE_COMPONENTS = (LossComponentId.L2_HR, LossComponentId.L2_LR)
TASK_COMPONENTS = (LossComponentId.TASK_DEEP, LossComponentId.TASK_OUT)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates, corners (x0, y0) to (x1, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def clip(self, height: int, width: int) -> "BBox":
        return BBox(
            max(0.0, min(self.x0, width - 1.0)),
            max(0.0, min(self.y0, height - 1.0)),
            max(1.0, min(self.x1, float(width))),
            max(1.0, min(self.y1, float(height))),
        )


def rasterize_boxes(boxes, height: int, width: int) -> np.ndarray:
    """Boolean coverage mask of a box list on a (height, width) grid."""
    mask = np.zeros((height, width), dtype=bool)
    for b in boxes:
        y0 = max(0, int(np.floor(b.y0)))
        x0 = max(0, int(np.floor(b.x0)))
        y1 = min(height, int(np.ceil(b.y1)))
        x1 = min(width, int(np.ceil(b.x1)))
        if y1 > y0 and x1 > x0:
            mask[y0:y1, x0:x1] = True
    return mask


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate the (H, W, C) layout; returns the array unchanged."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"{name}: expected (H, W, C) with C in {{1,3}}, got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name}: empty image {img.shape}")
    return img


def clamp_image(img: np.ndarray) -> np.ndarray:
    """Clamp pixel values into [0, 1]. Rejects NaN/inf input."""
    img = check_image(img)
    if not np.all(np.isfinite(img)):
        raise ValueError("non-finite pixel")
    return np.clip(img, 0.0, 1.0)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luminance; identity for single-channel input."""
    img = check_image(img)
    if img.shape[2] == 1:
        return img
    return (img @ _LUMA.astype(img.dtype))[..., None]


def load_png(path) -> np.ndarray:
    """Read an 8-bit PNG into a float32 (H, W, C) array in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16"):
            im = im.convert("L")
            arr = np.asarray(im, dtype=np.float32)[..., None]
        else:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32)
    return arr / 255.0


def save_png(path, img: np.ndarray) -> None:
    """Write an image as 8-bit PNG, rounding half-up after scaling by 255."""
    img = clamp_image(img)
    data = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    if data.shape[2] == 1:
        pil = Image.fromarray(data[..., 0], mode="L")
    else:
        pil = Image.fromarray(data, mode="RGB")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")


def derive_rng(seed: int, tag: str) -> np.random.Generator:
    """Deterministic per-stage RNG: one top-level seed fanned out by tag.

    The tag is folded in through crc32 so the derivation is stable across
    runs and platforms.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode())]))
    )
