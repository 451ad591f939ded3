"""Dataset plumbing: degradation, patch extraction, splits, manifests.

A dataset on disk is a directory with `hr/*.png` and optionally
`lr/*.png` (matching stems). When no LR images are given they are
produced by bicubic downsampling. `prepare_dataset` materializes the
patch grid and a manifest so that training runs never re-derive data.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from docsr.core import check_image, derive_rng, load_png, save_png
from docsr.resample import resample_image


@dataclass(frozen=True)
class DatasetSpec:
    """Geometry of a prepared dataset."""

    scale: int = 4
    patch_size_hr: int = 128
    stride_hr: int = 128
    split_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.scale < 2:
            raise ValueError("scale must be >= 2")
        if self.patch_size_hr % self.scale != 0:
            raise ValueError("patch_size_hr must be divisible by scale")
        if self.stride_hr % self.scale != 0:
            # keeps LR patches on integer pixel boundaries
            raise ValueError("stride_hr must be divisible by scale")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")


@dataclass
class SamplePair:
    """One LR/HR image pair with a stable id."""

    lr: np.ndarray
    hr: np.ndarray
    id: str
    scale: int = field(init=False)

    def __post_init__(self):
        check_image(self.lr)
        check_image(self.hr)
        hh, hw, hc = self.hr.shape
        lh, lw, lc = self.lr.shape
        if hc != lc:
            raise ValueError("lr and hr channel counts differ")
        if lh == 0 or hh % lh != 0 or hw % lw != 0 or hh // lh != hw // lw:
            raise ValueError(f"hr shape {self.hr.shape} is not an integer multiple "
                             f"of lr shape {self.lr.shape}")
        object.__setattr__(self, "scale", hh // lh)


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic-with-antialias downsample by an integer factor."""
    check_image(hr)
    h, w, _ = hr.shape
    if h % scale != 0 or w % scale != 0:
        raise ValueError(f"image size {h}x{w} not divisible by scale {scale}; "
                         "pad or crop first")
    lr = resample_image(hr, h // scale, w // scale, antialias=True)
    return np.clip(lr, 0.0, 1.0).astype(np.float32)


def center_crop_to_multiple(img: np.ndarray, scale: int) -> np.ndarray:
    """Crop H and W down to the nearest multiple of scale, centered."""
    check_image(img)
    h, w, _ = img.shape
    nh, nw = (h // scale) * scale, (w // scale) * scale
    if nh == 0 or nw == 0:
        raise ValueError(f"image {h}x{w} smaller than scale {scale}")
    y0, x0 = (h - nh) // 2, (w - nw) // 2
    return img[y0:y0 + nh, x0:x0 + nw]


def make_pair(hr: np.ndarray, id: str, scale: int) -> SamplePair:
    """Pair an HR image with its freshly degraded LR counterpart."""
    return SamplePair(lr=degrade(hr, scale), hr=np.ascontiguousarray(hr), id=id)


def extract_patches(pair: SamplePair, patch_size_hr: int, stride_hr: int) -> list[SamplePair]:
    """Cut a co-located LR/HR patch grid.

    Yields floor((H-p)/stride)+1 x floor((W-p)/stride)+1 pairs; images
    smaller than one patch yield none.
    """
    s = pair.scale
    if patch_size_hr % s != 0:
        raise ValueError("patch_size_hr must be divisible by the pair's scale")
    if stride_hr % s != 0:
        raise ValueError("stride_hr must be divisible by the pair's scale")
    h, w, _ = pair.hr.shape
    p, st = patch_size_hr, stride_hr
    out = []
    for r, y in enumerate(range(0, h - p + 1, st)):
        for c, x in enumerate(range(0, w - p + 1, st)):
            hr_patch = pair.hr[y:y + p, x:x + p]
            lr_patch = pair.lr[y // s:(y + p) // s, x // s:(x + p) // s]
            out.append(SamplePair(lr=np.ascontiguousarray(lr_patch),
                                  hr=np.ascontiguousarray(hr_patch),
                                  id=f"{pair.id}__r{r}_c{c}"))
    return out


def split_dataset(ids: list[str], fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Deterministic train/test split over sorted ids.

    |train| = round(fraction * |ids|), half-up.
    """
    if not ids:
        raise ValueError("cannot split an empty id list")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids")
    ordered = sorted(ids)
    rng = derive_rng(seed, "split")
    perm = rng.permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    n_train = int(np.floor(fraction * len(ordered) + 0.5))
    return shuffled[:n_train], shuffled[n_train:]


def _dataset_ids(root: Path) -> list[str]:
    hr_dir = root / "hr"
    if not hr_dir.is_dir():
        raise FileNotFoundError(f"{hr_dir} not found; expected <root>/hr/*.png")
    ids = sorted(p.stem for p in hr_dir.glob("*.png"))
    if not ids:
        raise FileNotFoundError(f"no .png files under {hr_dir}")
    return ids


def load_source_pair(root: Path, id: str, scale: int) -> SamplePair:
    """Load one source image pair, degrading HR if no LR file exists.

    HR images whose size is not a multiple of the scale are center
    cropped before use.
    """
    root = Path(root)
    hr = center_crop_to_multiple(load_png(root / "hr" / f"{id}.png"), scale)
    lr_path = root / "lr" / f"{id}.png"
    if lr_path.exists():
        lr = load_png(lr_path)
        if lr.shape[0] != hr.shape[0] // scale or lr.shape[1] != hr.shape[1] // scale:
            raise ValueError(f"{lr_path} does not match hr/{id}.png at scale {scale}")
        return SamplePair(lr=lr, hr=hr, id=id)
    return make_pair(hr, id, scale)


def prepare_dataset(root: str | Path, spec: DatasetSpec,
                    errors: list[str] | None = None) -> dict:
    """Materialize the patch grid and manifest for a source directory.

    Writes <root>/patches/{hr,lr}/<patch-id>.png and <root>/manifest.json.
    Re-running with the same spec is a no-op apart from rewriting the
    same bytes. Returns the manifest dict.

    With an `errors` list, a source image that fails to load or patch is
    recorded there and skipped while the rest are processed; without
    one, the first failure raises.
    """
    root = Path(root)
    ids = _dataset_ids(root)
    pairs: dict[str, SamplePair] = {}
    for id in ids:
        try:
            pairs[id] = load_source_pair(root, id, spec.scale)
        except Exception as e:
            if errors is None:
                raise
            errors.append(f"{id}: {e}")
    train_ids, test_ids = split_dataset(sorted(pairs), spec.split_fraction, spec.seed)
    split_of = {i: "train" for i in train_ids} | {i: "test" for i in test_ids}

    patch_hr_dir = root / "patches" / "hr"
    patch_lr_dir = root / "patches" / "lr"
    patch_hr_dir.mkdir(parents=True, exist_ok=True)
    patch_lr_dir.mkdir(parents=True, exist_ok=True)

    patches: dict[str, list[str]] = {"train": [], "test": []}
    for id in sorted(pairs):
        try:
            for patch in extract_patches(pairs[id], spec.patch_size_hr, spec.stride_hr):
                save_png(patch_hr_dir / f"{patch.id}.png", patch.hr)
                save_png(patch_lr_dir / f"{patch.id}.png", patch.lr)
                patches[split_of[id]].append(patch.id)
        except Exception as e:
            if errors is None:
                raise
            errors.append(f"{id}: {e}")
            patches[split_of[id]] = [p for p in patches[split_of[id]]
                                     if not p.startswith(f"{id}__")]
            train_ids = [i for i in train_ids if i != id]
            test_ids = [i for i in test_ids if i != id]

    manifest = {
        "scale": spec.scale,
        "patch_size_hr": spec.patch_size_hr,
        "stride_hr": spec.stride_hr,
        "split_fraction": spec.split_fraction,
        "seed": spec.seed,
        "train_ids": train_ids,
        "test_ids": test_ids,
        "patches": patches,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(root: str | Path) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run prepare first")
    return json.loads(path.read_text())


def load_patch_pairs(root: str | Path, split: str, manifest: dict | None = None) -> list[SamplePair]:
    """Load prepared patch pairs for one split ('train' or 'test')."""
    root = Path(root)
    if manifest is None:
        manifest = load_manifest(root)
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    pairs = []
    for pid in manifest["patches"][split]:
        pairs.append(SamplePair(lr=load_png(root / "patches" / "lr" / f"{pid}.png"),
                                hr=load_png(root / "patches" / "hr" / f"{pid}.png"),
                                id=pid))
    return pairs


def dataset_fingerprint(pairs: list[SamplePair]) -> str:
    """crc32 over all pixel bytes and ids, for quick cache keys."""
    crc = 0
    for p in pairs:
        crc = zlib.crc32(p.id.encode(), crc)
        crc = zlib.crc32(np.ascontiguousarray(p.lr).tobytes(), crc)
        crc = zlib.crc32(np.ascontiguousarray(p.hr).tobytes(), crc)
    return f"{crc:08x}"
