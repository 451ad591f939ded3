"""docsr: task-driven super-resolution for document images.

Trains single-image SR networks (SRCNN, FSRCNN, SRResNet) with a
multi-component objective that mixes image similarity with text-detection
feature losses, balanced per epoch by dynamic weight averaging, and
evaluates the results on image-quality and detection metrics.
"""

__version__ = "0.1.0"

from docsr.core import BBox, LossComponentId, clamp_image, to_grayscale

__all__ = ["BBox", "LossComponentId", "clamp_image", "to_grayscale", "__version__"]
