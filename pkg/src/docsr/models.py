"""SR network zoo: SRCNN, FSRCNN and SRResNet at a configurable scale.

Layer hyperparameters follow the original designs (SRCNN 9-1-5 with 64/32
filters, FSRCNN d=56/s=12/m=4, SRResNet with 16 residual blocks of 64
filters); `width_multiplier` shrinks every width for desk-scale runs.
SRCNN operates on a bicubic pre-upsampled input and predicts a residual
on top of it; FSRCNN upsamples with a transposed convolution and SRResNet
with pixel-shuffle stages. Outputs are left unclamped (clamping happens
at the evaluation/save boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from docsr import checkpoint as ckpt
from docsr.core import check_image, derive_rng
from docsr.nn import Var, constant, ops, init

ARCHS = ("srcnn", "fsrcnn", "srresnet")


@dataclass(frozen=True)
class SrModelConfig:
    arch: str = "srcnn"
    scale: int = 4
    channels: int = 3
    width_multiplier: float = 1.0
    n_resblocks: int = 16

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.scale < 2:
            raise ValueError("scale must be >= 2")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not (0.0 < self.width_multiplier <= 1.0):
            raise ValueError("width_multiplier must be in (0, 1]")
        if self.n_resblocks < 1:
            raise ValueError("n_resblocks must be positive")

    def width(self, base: int) -> int:
        return max(1, round(base * self.width_multiplier))


def _upsample_factors(scale: int) -> list[int]:
    factors = []
    s = scale
    while s % 2 == 0:
        factors.append(2)
        s //= 2
    if s > 1:
        factors.append(s)
    return factors


class SrModel:
    """Parameters are named float32 Vars; BN running stats live in buffers."""

    def __init__(self, config: SrModelConfig, seed: int):
        self.config = config
        self.seed = seed
        self.params: dict[str, Var] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def _add_conv(self, rng, name: str, c_in: int, c_out: int, k: int,
                  zero: bool = False) -> None:
        w = init.zeros((c_out, c_in, k, k)) if zero else init.conv_weight(rng, c_out, c_in, k)
        self.params[f"{name}.w"] = Var(w, name=f"{name}.w")
        self.params[f"{name}.b"] = Var(init.zeros((c_out,)), name=f"{name}.b")

    def _add_prelu(self, name: str, c: int) -> None:
        self.params[f"{name}.alpha"] = Var(init.full((c,), 0.25), name=f"{name}.alpha")

    def _add_bn(self, name: str, c: int) -> None:
        self.params[f"{name}.gamma"] = Var(init.ones((c,)), name=f"{name}.gamma")
        self.params[f"{name}.beta"] = Var(init.zeros((c,)), name=f"{name}.beta")
        self.buffers[f"{name}.running_mean"] = init.zeros((c,))
        self.buffers[f"{name}.running_var"] = init.ones((c,))

    # -- graph builders ----------------------------------------------------

    def _conv(self, x: Var, name: str, stride: int = 1, pad: int = 0) -> Var:
        return ops.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"],
                          stride=stride, pad=pad)

    def _prelu(self, x: Var, name: str) -> Var:
        return ops.prelu(x, self.params[f"{name}.alpha"])

    def _bn(self, x: Var, name: str, training: bool) -> Var:
        return ops.batchnorm2d(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                               self.buffers[f"{name}.running_mean"],
                               self.buffers[f"{name}.running_var"], training)

    def forward_batch(self, x, training: bool = False) -> Var:
        """(N, C, H, W) in, (N, C, H*s, W*s) out, unclamped."""
        x = x if isinstance(x, Var) else constant(np.asarray(x, dtype=np.float32))
        if x.data.ndim != 4 or x.data.shape[1] != self.config.channels:
            raise ValueError(
                f"expected (N, {self.config.channels}, H, W), got {x.data.shape}")
        fn = getattr(self, f"_forward_{self.config.arch}")
        return fn(x, training)

    def _forward_srcnn(self, x: Var, training: bool) -> Var:
        s = self.config.scale
        h, w = x.data.shape[2], x.data.shape[3]
        base = ops.resample2d(x, h * s, w * s, antialias=False)
        y = ops.relu(self._conv(base, "conv1", pad=4))
        y = ops.relu(self._conv(y, "conv2", pad=0))
        y = self._conv(y, "conv3", pad=2)
        return ops.add(base, y)

    def _forward_fsrcnn(self, x: Var, training: bool) -> Var:
        y = self._prelu(self._conv(x, "feature", pad=2), "feature_act")
        y = self._prelu(self._conv(y, "shrink", pad=0), "shrink_act")
        for i in range(4):
            y = self._prelu(self._conv(y, f"map{i}", pad=1), f"map{i}_act")
        y = self._prelu(self._conv(y, "expand", pad=0), "expand_act")
        s = self.config.scale
        return ops.conv2d_transpose(y, self.params["deconv.w"], self.params["deconv.b"],
                                    stride=s, pad=4, output_padding=s - 1)

    def _forward_srresnet(self, x: Var, training: bool) -> Var:
        y = self._prelu(self._conv(x, "head", pad=4), "head_act")
        skip = y
        for i in range(self.config.n_resblocks):
            r = self._bn(self._conv(y, f"block{i}.conv1", pad=1), f"block{i}.bn1", training)
            r = self._prelu(r, f"block{i}.act")
            r = self._bn(self._conv(r, f"block{i}.conv2", pad=1), f"block{i}.bn2", training)
            y = ops.add(y, r)
        y = self._bn(self._conv(y, "tail", pad=1), "tail_bn", training)
        y = ops.add(y, skip)
        for j, r in enumerate(_upsample_factors(self.config.scale)):
            y = self._conv(y, f"up{j}", pad=1)
            y = ops.pixel_shuffle(y, r)
            y = self._prelu(y, f"up{j}_act")
        return self._conv(y, "out", pad=4)

    # -- bookkeeping --------------------------------------------------------

    def trainable(self) -> dict[str, Var]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.data)) for p in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.params.items()}
        out.update(self.buffers)
        return out


def build_model(config: SrModelConfig, seed: int = 0) -> SrModel:
    """Deterministic construction: same (config, seed) gives identical
    parameters."""
    rng = derive_rng(seed, f"model-init/{config.arch}")
    m = SrModel(config, seed)
    c = config.channels
    if config.arch == "srcnn":
        n1, n2 = config.width(64), config.width(32)
        m._add_conv(rng, "conv1", c, n1, 9)
        m._add_conv(rng, "conv2", n1, n2, 1)
        m._add_conv(rng, "conv3", n2, c, 5)
    elif config.arch == "fsrcnn":
        d, s_ = config.width(56), config.width(12)
        m._add_conv(rng, "feature", c, d, 5)
        m._add_prelu("feature_act", d)
        m._add_conv(rng, "shrink", d, s_, 1)
        m._add_prelu("shrink_act", s_)
        for i in range(4):
            m._add_conv(rng, f"map{i}", s_, s_, 3)
            m._add_prelu(f"map{i}_act", s_)
        m._add_conv(rng, "expand", s_, d, 1)
        m._add_prelu("expand_act", d)
        # transposed conv weight layout: (C_from, C_to, KH, KW)
        w = init.he_normal(rng, (d, c, 9, 9), fan_in=d * 81)
        m.params["deconv.w"] = Var(w, name="deconv.w")
        m.params["deconv.b"] = Var(init.zeros((c,)), name="deconv.b")
    else:  # srresnet
        f = config.width(64)
        m._add_conv(rng, "head", c, f, 9)
        m._add_prelu("head_act", f)
        for i in range(config.n_resblocks):
            m._add_conv(rng, f"block{i}.conv1", f, f, 3)
            m._add_bn(f"block{i}.bn1", f)
            m._add_prelu(f"block{i}.act", f)
            m._add_conv(rng, f"block{i}.conv2", f, f, 3)
            m._add_bn(f"block{i}.bn2", f)
        m._add_conv(rng, "tail", f, f, 3)
        m._add_bn("tail_bn", f)
        for j, r in enumerate(_upsample_factors(config.scale)):
            m._add_conv(rng, f"up{j}", f, f * r * r, 3)
            m._add_prelu(f"up{j}_act", f)
        m._add_conv(rng, "out", f, c, 9)
    return m


def forward(model: SrModel, lr_img: np.ndarray) -> np.ndarray:
    """Spec-level single-image forward: (H, W, C) -> (H*s, W*s, C),
    unclamped float32."""
    check_image(lr_img, "lr")
    if lr_img.shape[2] != model.config.channels:
        raise ValueError(
            f"channel mismatch: model expects {model.config.channels}, got {lr_img.shape[2]}")
    x = np.transpose(lr_img, (2, 0, 1)).astype(np.float32)[None]
    y = model.forward_batch(x, training=False)
    return np.transpose(y.data[0], (1, 2, 0))


def save_model(model: SrModel, path) -> None:
    cfg = asdict(model.config)
    ckpt.save_checkpoint(path, model.state_arrays(),
                         {"kind": "sr_model", "model": cfg, "seed": model.seed},
                         extra={"buffers": sorted(model.buffers.keys())})


def load_model(path) -> SrModel:
    arrays, header = ckpt.load_checkpoint(path)
    cfg_d = header.get("config", {})
    if cfg_d.get("kind") != "sr_model":
        raise ckpt.CheckpointError("not an SR model checkpoint")
    config = SrModelConfig(**cfg_d["model"])
    model = build_model(config, seed=cfg_d.get("seed", 0))
    buffer_names = set(header.get("buffers", []))
    for name, arr in arrays.items():
        arr = arr.astype(np.float32)
        if name in buffer_names:
            if model.buffers[name].shape != arr.shape:
                raise ckpt.CheckpointError(f"buffer shape mismatch for {name}")
            model.buffers[name] = arr
        else:
            if name not in model.params:
                raise ckpt.CheckpointError(f"unexpected parameter {name}")
            if model.params[name].data.shape != arr.shape:
                raise ckpt.CheckpointError(f"parameter shape mismatch for {name}")
            model.params[name].data = arr
    missing = set(model.params) - set(arrays)
    if missing:
        raise ckpt.CheckpointError(f"missing parameters: {sorted(missing)[:4]}")
    return model
