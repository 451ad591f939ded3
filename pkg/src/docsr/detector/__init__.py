"""Frozen text-detection backends and self-supervised target extraction."""

from docsr.detector.backends import (ARCHS, DetectionOutput, DetectorBackend,
                                     build_detector, load_detector, save_detector)
from docsr.detector.decode import decode_boxes, vertical_iou
from docsr.detector.targets import extract_targets, load_or_compute_targets, target_cache_path
from docsr.detector.toy_fixture import load_toy_fixture

__all__ = [
    "ARCHS",
    "DetectionOutput",
    "DetectorBackend",
    "build_detector",
    "load_detector",
    "save_detector",
    "decode_boxes",
    "vertical_iou",
    "extract_targets",
    "load_or_compute_targets",
    "target_cache_path",
    "load_toy_fixture",
]
