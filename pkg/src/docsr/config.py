"""Experiment configuration: strict parsing, resolution, snapshots.

A config file is YAML with nested sections mirroring the dataclasses
below. Unknown keys are hard errors (a silently ignored typo in a loss
flag would invalidate an experiment). Loading resolves every default,
and the resolved snapshot written into a run directory is sufficient to
reproduce the run byte for byte.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from docsr.core import LossComponentId
from docsr.data import DatasetSpec
from docsr.loss import DWA_SCOPES
from docsr.models import SrModelConfig

FROM_SCRATCH = "from_scratch"
FINE_TUNE = "fine_tune"

DEFAULT_EPOCHS = {FROM_SCRATCH: 60, FINE_TUNE: 100}
DEFAULT_LR = {FROM_SCRATCH: 1e-4, FINE_TUNE: 1e-5}


@dataclass(frozen=True)
class TrainRegime:
    kind: str = FROM_SCRATCH
    epochs: int | None = None  # None resolves to the regime default
    init_checkpoint: str | None = None

    def __post_init__(self):
        if self.kind not in (FROM_SCRATCH, FINE_TUNE):
            raise ValueError(f"regime.kind must be {FROM_SCRATCH!r} or {FINE_TUNE!r}")
        if self.epochs is None:
            object.__setattr__(self, "epochs", DEFAULT_EPOCHS[self.kind])
        if self.epochs < 1:
            raise ValueError("regime.epochs must be positive")
        if self.kind == FINE_TUNE and not self.init_checkpoint:
            raise ValueError("fine_tune regime requires regime.init_checkpoint")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float | None = None  # None resolves per regime
    batch_size: int = 16
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("optimizer.learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("optimizer.batch_size must be >= 1")


@dataclass(frozen=True)
class DwaConfig:
    temperature: float = 2.0
    scope: str = "all"
    guard: bool = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("dwa.temperature must be positive")
        if self.scope not in DWA_SCOPES:
            raise ValueError(f"dwa.scope must be one of {DWA_SCOPES}")


@dataclass(frozen=True)
class BackendConfig:
    arch: str = "toy"
    weights: str | None = None  # None: packaged fixture for toy, seeded init otherwise
    confidence_threshold: float = 0.7

    def __post_init__(self):
        from docsr.detector.backends import ARCHS
        if self.arch not in ARCHS:
            raise ValueError(f"backend.arch must be one of {ARCHS}")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("backend.confidence_threshold outside [0, 1]")


@dataclass(frozen=True)
class DataConfig:
    root: str = "data"
    scale: int = 4
    patch_size_hr: int = 128
    stride_hr: int = 128
    split_fraction: float = 0.7

    def spec(self, seed: int) -> DatasetSpec:
        return DatasetSpec(scale=self.scale, patch_size_hr=self.patch_size_hr,
                           stride_hr=self.stride_hr, split_fraction=self.split_fraction,
                           seed=seed)


@dataclass(frozen=True)
class ExperimentConfig:
    label: str = "run"
    seed: int = 0
    model: SrModelConfig = field(default_factory=SrModelConfig)
    regime: TrainRegime = field(default_factory=TrainRegime)
    enabled_losses: tuple[LossComponentId, ...] = tuple(LossComponentId)
    dwa: DwaConfig = field(default_factory=DwaConfig)
    data: DataConfig = field(default_factory=DataConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    output_dir: str = "out"

    def __post_init__(self):
        if not self.enabled_losses:
            raise ValueError("enabled_losses must not be empty")
        if len(set(self.enabled_losses)) != len(self.enabled_losses):
            raise ValueError("enabled_losses contains duplicates")
        if not self.label or "/" in self.label or self.label.startswith("."):
            raise ValueError(f"label {self.label!r} is not a valid run id")
        if self.model.scale != self.data.scale:
            raise ValueError(f"model.scale {self.model.scale} != data.scale {self.data.scale}")

    @property
    def learning_rate(self) -> float:
        if self.optimizer.learning_rate is not None:
            return self.optimizer.learning_rate
        return DEFAULT_LR[self.regime.kind]


_SECTIONS = {
    "model": SrModelConfig,
    "regime": TrainRegime,
    "dwa": DwaConfig,
    "data": DataConfig,
    "optimizer": OptimizerConfig,
    "backend": BackendConfig,
}


def _build_section(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ValueError(f"config section {path!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ValueError(f"unknown config key(s) under {path!r}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ValueError(f"invalid config section {path!r}: {e}") from e


def _parse_losses(raw) -> tuple[LossComponentId, ...]:
    if not isinstance(raw, (list, tuple)):
        raise ValueError("enabled_losses must be a list of component names")
    out = []
    for name in raw:
        try:
            out.append(LossComponentId(name))
        except ValueError:
            valid = [c.value for c in LossComponentId]
            raise ValueError(f"unknown loss component {name!r}; valid: {valid}") from None
    return tuple(out)


def config_from_dict(raw: dict, source: str = "<dict>") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ValueError(f"{source}: top level must be a mapping")
    known = {"label", "seed", "enabled_losses", "output_dir", *_SECTIONS}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{source}: unknown top-level config key(s): {sorted(unknown)}")
    kwargs: dict = {}
    for key in ("label", "seed", "output_dir"):
        if key in raw:
            kwargs[key] = raw[key]
    if "enabled_losses" in raw:
        kwargs["enabled_losses"] = _parse_losses(raw["enabled_losses"])
    for key, cls in _SECTIONS.items():
        if key in raw:
            kwargs[key] = _build_section(cls, raw[key], key)
    return ExperimentConfig(**kwargs)


def load_config(path, seed: int | None = None, output_dir: str | None = None
                ) -> ExperimentConfig:
    """Parse and resolve a config file; optional CLI overrides."""
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        raw = {}
    cfg = config_from_dict(raw, source=str(path))
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if output_dir is not None:
        cfg = dataclasses.replace(cfg, output_dir=output_dir)
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully resolved nested dict; every field has its final value."""
    d = dataclasses.asdict(cfg)
    d["enabled_losses"] = [c.value for c in cfg.enabled_losses]
    return d


def save_snapshot(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def load_matrix(path) -> list[ExperimentConfig]:
    """Parse a matrix file: optional `defaults` mapping + `rows` list.

    Row dicts override defaults shallowly per section; every row must
    resolve to a unique label (run directories must be disjoint).
    """
    raw = yaml.safe_load(Path(path).read_text()) or {}
    unknown = set(raw) - {"defaults", "rows"}
    if unknown:
        raise ValueError(f"{path}: unknown matrix key(s): {sorted(unknown)}")
    defaults = raw.get("defaults", {}) or {}
    rows = raw.get("rows", []) or []
    if not isinstance(rows, list):
        raise ValueError(f"{path}: rows must be a list")
    configs = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise ValueError(f"{path}: row {i} must be a mapping")
        merged = dict(defaults)
        for k, v in row.items():
            if k in _SECTIONS and isinstance(v, dict) and isinstance(merged.get(k), dict):
                merged[k] = {**merged[k], **v}
            else:
                merged[k] = v
        configs.append(config_from_dict(merged, source=f"{path} row {i}"))
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ValueError(f"{path}: duplicate row labels; run directories must be disjoint")
    return configs
