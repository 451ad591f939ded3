"""Training loop: composite loss, DWA re-weighting, run artifacts.

A run owns a directory `<output_dir>/runs/<label>/` containing the
resolved config snapshot, per-epoch checkpoints, `metrics.csv` (one row
per component per epoch: raw mean, weight in force, weighted value) and
`final.ckpt`. Given the snapshot and the prepared dataset, a rerun is
bit-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import shutil
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from docsr import models
from docsr.config import FINE_TUNE, ExperimentConfig, save_snapshot
from docsr.core import TASK_COMPONENTS, derive_rng
from docsr.data import SamplePair, load_patch_pairs
from docsr.detector import (DetectorBackend, build_detector, load_detector,
                            load_or_compute_targets, load_toy_fixture)
from docsr.loss import DwaState, LossBreakdown, composite_loss, dwa_update
from docsr.nn.autodiff import Var
from docsr.nn.optim import Adam, clip_global_norm

METRICS_COLUMNS = ("epoch", "component", "raw_value", "weight", "weighted_value")


class TrainAbort(RuntimeError):
    """Raised when a loss component stops being finite."""

    def __init__(self, component: str, epoch: int, value: float):
        self.component = component
        self.epoch = epoch
        super().__init__(
            f"non-finite loss in component {component!r} at epoch {epoch} "
            f"(value {value!r}); aborting run")


def resolve_backend(cfg: ExperimentConfig) -> DetectorBackend:
    """Detector per config: explicit weights file, else the packaged toy
    fixture, else seeded-random weights for ctpn-ref."""
    bc = cfg.backend
    if bc.weights:
        backend = load_detector(bc.weights)
        if backend.arch != bc.arch:
            raise ValueError(
                f"backend.weights holds a {backend.arch!r} detector, config says {bc.arch!r}")
    elif bc.arch == "toy":
        backend = load_toy_fixture()
    else:
        backend = build_detector(bc.arch, channels=cfg.model.channels, seed=cfg.seed)
    if backend.channels != cfg.model.channels:
        raise ValueError(
            f"detector expects {backend.channels} channels, model has {cfg.model.channels}")
    backend.confidence_threshold = bc.confidence_threshold
    return backend


def _load_init_model(cfg: ExperimentConfig) -> models.SrModel:
    model = models.load_model(cfg.regime.init_checkpoint)
    if model.config != cfg.model:
        raise ValueError(
            f"init_checkpoint model config {model.config} does not match "
            f"configured model {cfg.model}")
    return model


def _stack_pairs(pairs: list[SamplePair]) -> tuple[np.ndarray, np.ndarray]:
    """(N, C, h, w) LR and (N, C, H, W) HR batches; patches must be uniform."""
    shapes = {p.hr.shape for p in pairs}
    if len(shapes) != 1:
        raise ValueError(f"cannot batch mixed patch shapes: {sorted(shapes)}")
    lr = np.stack([np.transpose(p.lr, (2, 0, 1)) for p in pairs]).astype(np.float32)
    hr = np.stack([np.transpose(p.hr, (2, 0, 1)) for p in pairs]).astype(np.float32)
    return lr, hr


def _stack_target_taps(targets, ids: list[str]) -> dict[str, np.ndarray]:
    """Cached per-sample HWC taps -> NCHW batch arrays."""
    return {
        "deep": np.stack([np.transpose(targets[i].deep_features, (2, 0, 1)) for i in ids]),
        "out_coords": np.stack([np.transpose(targets[i].out_coords, (2, 0, 1)) for i in ids]),
        "out_scores": np.stack([np.transpose(targets[i].out_scores, (2, 0, 1)) for i in ids]),
    }


def _check_finite(breakdown: LossBreakdown, epoch: int) -> None:
    for comp, value in breakdown.values.items():
        if not math.isfinite(value):
            raise TrainAbort(comp.value, epoch, value)


def _val_psnr(model: models.SrModel, pairs: list[SamplePair], batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        lr, hr = _stack_pairs(chunk)
        sr = np.clip(model.forward_batch(lr).data, 0.0, 1.0)
        for j in range(len(chunk)):
            mse = float(np.mean((sr[j].astype(np.float64) - hr[j]) ** 2))
            total += 100.0 if mse < 1e-10 else 10.0 * math.log10(1.0 / mse)
    return total / len(pairs)


class _MetricsWriter:
    """Appends one epoch of component rows at a time, flushing so partial
    logs survive an abort."""

    def __init__(self, path: Path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(METRICS_COLUMNS)
        self._fh.flush()

    def write_epoch(self, epoch: int, breakdown_means: dict, weights: dict) -> None:
        for comp in sorted(breakdown_means, key=lambda c: c.value):
            raw = breakdown_means[comp]
            w = weights[comp]
            self._w.writerow([epoch, comp.value, repr(raw), repr(w), repr(raw * w)])
        self._fh.flush()

    def close(self):
        self._fh.close()


def train_run(cfg: ExperimentConfig, *, pairs: list[SamplePair] | None = None,
              backend: DetectorBackend | None = None, log=None) -> Path:
    """Run one training job; returns the run directory.

    `pairs`/`backend` overrides exist for tests; the CLI path loads both
    from the config. All randomness derives from cfg.seed.
    """
    say = log if log is not None else (lambda msg: None)
    run_dir = Path(cfg.output_dir) / "runs" / cfg.label
    if run_dir.exists():
        shutil.rmtree(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True)
    save_snapshot(cfg, run_dir / "config.snapshot")

    if pairs is None:
        pairs = load_patch_pairs(Path(cfg.data.root), "train")
    if not pairs:
        raise ValueError("no training pairs; run prepare first")
    for p in pairs:
        if p.scale != cfg.data.scale:
            raise ValueError(f"pair {p.id!r} has scale {p.scale}, config says {cfg.data.scale}")

    # Holdout: 10% of the training ids (at least 1) for epoch monitoring.
    by_id = {p.id: p for p in pairs}
    ids = sorted(by_id)
    perm = derive_rng(cfg.seed, "val-holdout").permutation(len(ids))
    n_val = max(1, int(len(ids) * 0.1)) if len(ids) > 1 else 0
    val_ids = sorted(ids[i] for i in perm[:n_val])
    train_ids = sorted(ids[i] for i in perm[n_val:])
    train_pairs = [by_id[i] for i in train_ids]
    val_pairs = [by_id[i] for i in val_ids]

    use_task = any(c in TASK_COMPONENTS for c in cfg.enabled_losses)
    targets = {}
    frozen_hash = None
    if use_task:
        if backend is None:
            backend = resolve_backend(cfg)
        frozen_hash = backend.param_hash()
        say(f"detector {backend.backend_id()}; caching targets for {len(pairs)} patches")
        cache_root = Path(cfg.output_dir) / "cache"
        for p in pairs:
            targets[p.id] = load_or_compute_targets(backend, p.hr, p.id, cache_root)

    if cfg.regime.kind == FINE_TUNE:
        model = _load_init_model(cfg)
    else:
        model = models.build_model(cfg.model, seed=cfg.seed)

    opt = Adam(model.params, lr=cfg.learning_rate)
    state = DwaState(enabled=cfg.enabled_losses, temperature=cfg.dwa.temperature,
                     scope=cfg.dwa.scope, guard=cfg.dwa.guard)
    metrics = _MetricsWriter(run_dir / "metrics.csv")
    bs = cfg.optimizer.batch_size

    try:
        for epoch in range(1, cfg.regime.epochs + 1):
            order = derive_rng(cfg.seed, f"batches/{epoch}").permutation(len(train_pairs))
            sums = {c: 0.0 for c in cfg.enabled_losses}
            n_seen = 0
            for start in range(0, len(order), bs):
                chunk = [train_pairs[i] for i in order[start:start + bs]]
                lr_b, hr_b = _stack_pairs(chunk)
                sr = model.forward_batch(Var(lr_b), training=True)
                sr_taps = target_taps = None
                if use_task:
                    sr_taps = backend.taps(sr)
                    target_taps = _stack_target_taps(targets, [p.id for p in chunk])
                total, breakdown = composite_loss(
                    sr, hr_b, lr_b, state, cfg.data.scale,
                    sr_taps=sr_taps, target_taps=target_taps)
                _check_finite(breakdown, epoch)
                opt.zero_grad()
                total.backward()
                clip_global_norm(model.params, cfg.optimizer.grad_clip)
                opt.step()
                for c, v in breakdown.values.items():
                    sums[c] += v * len(chunk)
                n_seen += len(chunk)

            if use_task and backend.param_hash() != frozen_hash:
                raise RuntimeError("detector parameters changed during training; "
                                   "the task network must stay frozen")
            means = {c: sums[c] / n_seen for c in cfg.enabled_losses}
            metrics.write_epoch(epoch, means, state.weights)
            state = dwa_update(state, means)
            models.save_model(model, run_dir / "checkpoints" / f"epoch_{epoch:03d}.ckpt")
            if val_pairs:
                say(f"epoch {epoch}/{cfg.regime.epochs}: "
                    + " ".join(f"{c.value}={means[c]:.6f}" for c in cfg.enabled_losses)
                    + f" val_psnr={_val_psnr(model, val_pairs, bs):.2f}dB")
            else:
                say(f"epoch {epoch}/{cfg.regime.epochs}: "
                    + " ".join(f"{c.value}={means[c]:.6f}" for c in cfg.enabled_losses))
    finally:
        metrics.close()

    models.save_model(model, run_dir / "final.ckpt")
    return run_dir


def read_metrics(path) -> list[dict]:
    """metrics.csv rows as dicts with numeric fields parsed."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(METRICS_COLUMNS):
            raise ValueError(f"{path}: malformed metrics header {header!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(METRICS_COLUMNS):
                raise ValueError(f"{path}: line {lineno}: expected "
                                 f"{len(METRICS_COLUMNS)} fields, got {len(row)}")
            try:
                rows.append({"epoch": int(row[0]), "component": row[1],
                             "raw_value": float(row[2]), "weight": float(row[3]),
                             "weighted_value": float(row[4])})
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric field in {row!r}") from None
    return rows


@dataclasses.dataclass(frozen=True)
class MatrixRow:
    label: str
    ok: bool
    run_dir: str | None
    error: str | None


def _run_row(cfg: ExperimentConfig) -> MatrixRow:
    try:
        run_dir = train_run(cfg)
        return MatrixRow(cfg.label, True, str(run_dir), None)
    except Exception as e:  # noqa: BLE001 - row isolation is the contract
        return MatrixRow(cfg.label, False, None,
                         "".join(traceback.format_exception_only(type(e), e)).strip())


def training_matrix(configs: list[ExperimentConfig], jobs: int = 1,
                    log=None) -> list[MatrixRow]:
    """Run every row; a failing row is recorded, the rest continue."""
    say = log if log is not None else (lambda msg: None)
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate matrix labels; run directories must be disjoint")
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_row, configs))
    else:
        results = [_run_row(c) for c in configs]
    for r in results:
        say(f"[{'ok' if r.ok else 'FAILED'}] {r.label}" + ("" if r.ok else f": {r.error}"))
    return results
