"""Self-supervised detection targets from HR reference images.

Targets are the frozen detector's own output on the HR image, detached
from any gradient flow (they are plain arrays by construction). Because
the detector never changes within a run, targets are computed once per
sample and cached on disk, one checkpoint-container file per sample id
under cache/targets/<backend-id>/.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from docsr.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from docsr.core import BBox, check_image
from docsr.detector.backends import DetectionOutput, DetectorBackend


def extract_targets(backend: DetectorBackend, hr: np.ndarray) -> DetectionOutput:
    """detect(hr) with gradient flow severed; identical values."""
    check_image(hr)
    return backend.detect(hr)


def _safe_name(sample_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", sample_id)


def target_cache_path(cache_root, backend: DetectorBackend, sample_id: str) -> Path:
    return Path(cache_root) / "targets" / backend.backend_id() / f"{_safe_name(sample_id)}.ckpt"


def _to_arrays(out: DetectionOutput) -> dict[str, np.ndarray]:
    boxes = np.array([[b.x0, b.y0, b.x1, b.y1] for b in out.boxes],
                     dtype=np.float32).reshape(-1, 4)
    return {
        "deep": out.deep_features,
        "out_coords": out.out_coords,
        "out_scores": out.out_scores,
        "boxes": boxes,
        "confidences": np.asarray(out.confidences, dtype=np.float32),
    }


def _from_arrays(arrays: dict[str, np.ndarray]) -> DetectionOutput:
    boxes = [BBox(*row) for row in arrays["boxes"].astype(float)]
    return DetectionOutput(boxes=boxes,
                           confidences=[float(c) for c in arrays["confidences"]],
                           deep_features=arrays["deep"],
                           out_coords=arrays["out_coords"],
                           out_scores=arrays["out_scores"])


def load_or_compute_targets(backend: DetectorBackend, hr: np.ndarray, sample_id: str,
                            cache_root) -> DetectionOutput:
    """Fetch cached targets for sample_id, computing and caching on miss.

    A cache file written by a different parameter set can never be read
    back here: the backend id in the path pins the exact weights.
    """
    path = target_cache_path(cache_root, backend, sample_id)
    if path.exists():
        try:
            arrays, _ = load_checkpoint(path)
            return _from_arrays(arrays)
        except CheckpointError:
            path.unlink()  # partial write from an interrupted run
    out = extract_targets(backend, hr)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, _to_arrays(out),
                    config={"backend_id": backend.backend_id(), "sample_id": sample_id})
    return out
