"""Frozen text-detection backends exposing the deep/out feature taps.

Two implementations behind one interface: `ctpn-ref`, a CTPN-style
detector (VGG-16 trunk at stride 16, 512-wide per-position stage, 10
anchor heights, 2k=20 coordinate and 20 score channels) that can load
externally supplied weights, and `toy`, a small stride-8 net with the
same tap shapes that we train on the synthetic document generator and
ship as a fixture.

Backends are built with plain frozen ndarrays; the forward pass wraps
them as non-differentiable constants, so gradients reach the input
pixels but never the detector parameters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from docsr.checkpoint import load_checkpoint, save_checkpoint
from docsr.core import BBox, check_image, derive_rng
from docsr.detector.decode import decode_boxes
from docsr.nn import init
from docsr.nn.autodiff import Var, constant
from docsr.nn.ops import conv2d, maxpool2x2, pad2d, relu, sigmoid

DEEP_CHANNELS = 512
OUT_CHANNELS = 20

TOY_ANCHOR_HEIGHTS = (8.0, 11.0, 16.0, 23.0, 32.0, 45.0, 64.0, 91.0, 128.0, 181.0)
CTPN_ANCHOR_HEIGHTS = (11.0, 16.0, 23.0, 33.0, 48.0, 68.0, 97.0, 139.0, 198.0, 283.0)


@dataclass(frozen=True)
class FeatureSpec:
    """Declared tap geometry of a backend."""

    stride: int
    min_size: int
    deep_channels: int = DEEP_CHANNELS
    out_channels: int = OUT_CHANNELS


@dataclass
class DetectionOutput:
    """Boxes plus the two task-loss feature taps for one image."""

    boxes: list[BBox]
    confidences: list[float]
    deep_features: np.ndarray  # (h', w', 512)
    out_coords: np.ndarray     # (h', w', 20)
    out_scores: np.ndarray     # (h', w', 20)

    def __post_init__(self):
        if len(self.boxes) != len(self.confidences):
            raise ValueError("boxes and confidences length mismatch")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    arr.flags.writeable = False
    return arr


@dataclass
class DetectorBackend:
    """Base class; subclasses define the layer stack in _forward."""

    arch: str
    channels: int
    spec: FeatureSpec
    anchor_heights: tuple[float, ...]
    params: dict[str, np.ndarray]
    confidence_threshold: float = 0.7
    _hash: str | None = field(default=None, repr=False)

    def __post_init__(self):
        self.params = {k: _freeze(v) for k, v in self.params.items()}

    def param_hash(self) -> str:
        """sha256 over sorted parameter names, shapes and bytes."""
        if self._hash is None:
            h = hashlib.sha256()
            for name in sorted(self.params):
                arr = self.params[name]
                h.update(name.encode())
                h.update(str(arr.shape).encode())
                h.update(arr.tobytes())
            self._hash = h.hexdigest()
        return self._hash

    def backend_id(self) -> str:
        return f"{self.arch}-{self.param_hash()[:12]}"

    def _p(self, name: str) -> Var:
        return constant(self.params[name], name=name)

    def _forward(self, x: Var) -> tuple[Var, Var, Var]:
        raise NotImplementedError

    def _check_size(self, h: int, w: int) -> None:
        s, m = self.spec.stride, self.spec.min_size
        if h < m or w < m or h % s != 0 or w % s != 0:
            raise ValueError(f"input {h}x{w} too small for {self.arch}: needs at least "
                             f"{m}x{m} and multiples of {s}")

    def taps(self, x):
        """deep/out taps for an (N, C, H, W) batch.

        Accepts a Var (differentiable w.r.t. the input, never the
        parameters) or an ndarray (plain arrays back).
        """
        is_var = isinstance(x, Var)
        xv = x if is_var else constant(np.asarray(x, dtype=np.float32))
        n, c, h, w = xv.data.shape
        if c != self.channels:
            raise ValueError(f"{self.arch} expects {self.channels} channels, got {c}")
        self._check_size(h, w)
        deep, coords, scores = self._forward(xv)
        if is_var:
            return {"deep": deep, "out_coords": coords, "out_scores": scores}
        return {"deep": deep.data, "out_coords": coords.data, "out_scores": scores.data}

    def detect(self, img: np.ndarray, threshold: float | None = None) -> DetectionOutput:
        """Run the full pipeline on one (H, W, C) image."""
        check_image(img)
        if img.shape[2] != self.channels:
            raise ValueError(f"{self.arch} expects {self.channels} channels, "
                             f"got {img.shape[2]}")
        x = np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=np.float32)
        t = self.taps(x)
        deep = t["deep"][0].transpose(1, 2, 0)
        coords = t["out_coords"][0].transpose(1, 2, 0)
        scores = t["out_scores"][0].transpose(1, 2, 0)
        thr = self.confidence_threshold if threshold is None else threshold
        boxes, confs = decode_boxes(coords, scores, thr, stride=self.spec.stride,
                                    anchor_heights=self.anchor_heights,
                                    image_size=img.shape[:2])
        return DetectionOutput(boxes=boxes, confidences=confs, deep_features=deep,
                               out_coords=coords, out_scores=scores)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return dict(self.params)


def toy_tap_forward(params: dict[str, Var], x: Var) -> tuple[Var, Var, Var]:
    """The toy layer stack over an arbitrary parameter binding.

    The fixture trainer calls this with trainable Vars; the frozen
    backend calls it with constants.
    """
    y = x
    for i, (name, _) in enumerate(ToyDetector.LAYERS):
        y = relu(conv2d(y, params[f"{name}.w"], params[f"{name}.b"], pad=1))
        if i < 3:
            y = maxpool2x2(y)
    deep = y
    coords = conv2d(deep, params["head_coords.w"], params["head_coords.b"])
    scores = sigmoid(conv2d(deep, params["head_scores.w"], params["head_scores.b"]))
    return deep, coords, scores


class ToyDetector(DetectorBackend):
    """Small stride-8 conv detector with CTPN-shaped taps."""

    LAYERS = (("c1", 3), ("c2", 3), ("c3", 3), ("c4", 3))
    WIDTHS = (32, 64, 128, DEEP_CHANNELS)

    def _forward(self, x: Var) -> tuple[Var, Var, Var]:
        return toy_tap_forward({k: self._p(k) for k in self.params}, x)


class CtpnRefDetector(DetectorBackend):
    """CTPN-style reference: VGG-16 trunk to conv5_3 (stride 16), a 3x3
    proposal conv, a 1x9 conv over columns standing in for the recurrent
    stage, and a 1x1 stage up to the 512-wide per-position tap."""

    VGG_WIDTHS = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M",
                  512, 512, 512)

    def _forward(self, x: Var) -> tuple[Var, Var, Var]:
        y = x
        i = 0
        for w in self.VGG_WIDTHS:
            if w == "M":
                y = maxpool2x2(y)
            else:
                y = relu(conv2d(y, self._p(f"vgg{i}.w"), self._p(f"vgg{i}.b"), pad=1))
                i += 1
        y = relu(conv2d(y, self._p("rpn.w"), self._p("rpn.b"), pad=1))
        y = relu(conv2d(pad2d(y, 0, 4), self._p("col.w"), self._p("col.b")))
        deep = relu(conv2d(y, self._p("fc.w"), self._p("fc.b")))
        coords = conv2d(deep, self._p("head_coords.w"), self._p("head_coords.b"))
        scores = sigmoid(conv2d(deep, self._p("head_scores.w"), self._p("head_scores.b")))
        return deep, coords, scores


def _toy_params(channels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    widths = ToyDetector.WIDTHS
    params: dict[str, np.ndarray] = {}
    c_in = channels
    for (name, k), c_out in zip(ToyDetector.LAYERS, widths):
        params[f"{name}.w"] = init.conv_weight(rng, c_out, c_in, k)
        params[f"{name}.b"] = init.zeros(c_out)
        c_in = c_out
    for head in ("head_coords", "head_scores"):
        params[f"{head}.w"] = init.conv_weight(rng, OUT_CHANNELS, DEEP_CHANNELS, 1)
        params[f"{head}.b"] = init.zeros(OUT_CHANNELS)
    return params


def _ctpn_params(channels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    c_in = channels
    i = 0
    for w in CtpnRefDetector.VGG_WIDTHS:
        if w == "M":
            continue
        params[f"vgg{i}.w"] = init.conv_weight(rng, w, c_in, 3)
        params[f"vgg{i}.b"] = init.zeros(w)
        c_in = w
        i += 1
    params["rpn.w"] = init.conv_weight(rng, 512, 512, 3)
    params["rpn.b"] = init.zeros(512)
    params["col.w"] = init.conv_weight(rng, 256, 512, (1, 9))
    params["col.b"] = init.zeros(256)
    params["fc.w"] = init.conv_weight(rng, DEEP_CHANNELS, 256, 1)
    params["fc.b"] = init.zeros(DEEP_CHANNELS)
    for head in ("head_coords", "head_scores"):
        params[f"{head}.w"] = init.conv_weight(rng, OUT_CHANNELS, DEEP_CHANNELS, 1)
        params[f"{head}.b"] = init.zeros(OUT_CHANNELS)
    return params


ARCHS = ("toy", "ctpn-ref")


def build_detector(arch: str, channels: int = 3, seed: int = 0,
                   params: dict[str, np.ndarray] | None = None,
                   confidence_threshold: float = 0.7) -> DetectorBackend:
    """Construct a backend, seeded-random unless params are supplied."""
    if arch not in ARCHS:
        raise ValueError(f"unknown detector arch {arch!r}; expected one of {ARCHS}")
    rng = derive_rng(seed, f"detector-init/{arch}")
    if arch == "toy":
        p = params if params is not None else _toy_params(channels, rng)
        return ToyDetector(arch=arch, channels=channels,
                           spec=FeatureSpec(stride=8, min_size=8),
                           anchor_heights=TOY_ANCHOR_HEIGHTS, params=p,
                           confidence_threshold=confidence_threshold)
    p = params if params is not None else _ctpn_params(channels, rng)
    return CtpnRefDetector(arch=arch, channels=channels,
                           spec=FeatureSpec(stride=16, min_size=16),
                           anchor_heights=CTPN_ANCHOR_HEIGHTS, params=p,
                           confidence_threshold=confidence_threshold)


def save_detector(path, backend: DetectorBackend) -> None:
    save_checkpoint(path, backend.state_arrays(),
                    config={"arch": backend.arch, "channels": backend.channels,
                            "confidence_threshold": backend.confidence_threshold})


def load_detector(path) -> DetectorBackend:
    """Load backend weights from the shared checkpoint container."""
    arrays, header = load_checkpoint(path)
    cfg = header["config"]
    return build_detector(cfg["arch"], channels=cfg["channels"], params=arrays,
                          confidence_threshold=cfg.get("confidence_threshold", 0.7))
