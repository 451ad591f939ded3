"""The composite training objective and its dynamic weighting.

Four components: L2 against the HR reference, L2 between the
downsampled output and the LR input (consistency), and L1 distances in
the detector's deep and out feature spaces against targets extracted
from the HR reference. Components are balanced by Dynamic Weight
Averaging: once per epoch, each component's weight is set from how fast
its epoch-mean loss has been falling, w_x = N * exp(r_x/T) / sum_i
exp(r_i/T) with r_i = L_i(t-1)/L_i(t-2), so components whose losses
stall get pushed harder.

Component losses are dual-mode: they build an autodiff graph when
handed Vars and plain floats when handed arrays. Targets enter as bare
arrays, so no gradient can reach them or the detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from docsr.core import TASK_COMPONENTS, LossComponentId
from docsr.nn.autodiff import Var, constant
from docsr.nn.ops import absolute, add, concat, mean_all, mul_const, resample2d, square, sub
from docsr.resample import resample_image

DWA_SCOPES = ("all", "task_only")
GUARD_FLOOR = 1e-12


# ----------------------------------------------------- component losses ----

def _mse_var(a: Var, b: np.ndarray) -> Var:
    return mean_all(square(sub(a, constant(np.asarray(b, dtype=a.data.dtype)))))


def l2_hr(sr, hr):
    """Mean squared error between the SR output and the HR reference."""
    hr_arr = hr.data if isinstance(hr, Var) else np.asarray(hr)
    sr_shape = sr.data.shape if isinstance(sr, Var) else np.asarray(sr).shape
    if sr_shape != hr_arr.shape:
        raise ValueError(f"l2_hr shape mismatch {sr_shape} vs {hr_arr.shape}")
    if isinstance(sr, Var):
        return _mse_var(sr, hr_arr)
    return float(np.mean((np.asarray(sr, dtype=np.float64) - hr_arr.astype(np.float64)) ** 2))


def l2_lr(sr, lr, s: int):
    """Consistency: MSE between the bicubic-downsampled SR and the LR input."""
    lr_arr = lr.data if isinstance(lr, Var) else np.asarray(lr)
    if isinstance(sr, Var):
        n, c, h, w = sr.data.shape
        if lr_arr.shape != (n, c, h // s, w // s) or h % s or w % s:
            raise ValueError(f"l2_lr shape mismatch: sr {sr.data.shape}, lr {lr_arr.shape}, "
                             f"scale {s}")
        down = resample2d(sr, h // s, w // s, antialias=True)
        return _mse_var(down, lr_arr)
    sr_arr = np.asarray(sr)
    if sr_arr.ndim == 3:
        h, w, c = sr_arr.shape
        if lr_arr.shape != (h // s, w // s, c) or h % s or w % s:
            raise ValueError(f"l2_lr shape mismatch: sr {sr_arr.shape}, lr {lr_arr.shape}, "
                             f"scale {s}")
        down = resample_image(sr_arr, h // s, w // s, antialias=True)
        return float(np.mean((down.astype(np.float64) - lr_arr.astype(np.float64)) ** 2))
    raise ValueError("l2_lr ndarray path expects an (H, W, C) image")


def task_l1(features_sr, features_target):
    """Mean absolute difference between two feature taps of equal shape."""
    tgt = features_target.data if isinstance(features_target, Var) \
        else np.asarray(features_target)
    sr_shape = features_sr.data.shape if isinstance(features_sr, Var) \
        else np.asarray(features_sr).shape
    if sr_shape != tgt.shape:
        raise ValueError(f"task_l1 shape mismatch {sr_shape} vs {tgt.shape}")
    if isinstance(features_sr, Var):
        return mean_all(absolute(sub(features_sr, constant(tgt.astype(features_sr.data.dtype)))))
    return float(np.mean(np.abs(np.asarray(features_sr, dtype=np.float64)
                                - tgt.astype(np.float64))))


# ------------------------------------------------------------------ DWA ----

@dataclass(frozen=True)
class DwaState:
    """Per-component loss history and the weights currently in force."""

    enabled: tuple[LossComponentId, ...]
    temperature: float = 2.0
    scope: str = "all"
    guard: bool = True
    history: dict[LossComponentId, tuple[float, ...]] = field(default_factory=dict)
    weights: dict[LossComponentId, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.enabled:
            raise ValueError("enabled loss set is empty")
        if len(set(self.enabled)) != len(self.enabled):
            raise ValueError("duplicate loss components")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.scope not in DWA_SCOPES:
            raise ValueError(f"dwa scope must be one of {DWA_SCOPES}")
        if not self.history:
            object.__setattr__(self, "history", {c: () for c in self.enabled})
        if not self.weights:
            object.__setattr__(self, "weights", {c: 1.0 for c in self.enabled})

    @property
    def scoped(self) -> tuple[LossComponentId, ...]:
        if self.scope == "task_only":
            return tuple(c for c in self.enabled if c in TASK_COMPONENTS)
        return self.enabled

    @property
    def n_tasks(self) -> int:
        return len(self.enabled)

    def epoch(self) -> int:
        return len(self.history[self.enabled[0]])


def dwa_update(state: DwaState, epoch_means: dict[LossComponentId, float]) -> DwaState:
    """Fold one epoch of mean component losses into the state.

    Weights stay 1.0 until two epochs of history exist (cold start,
    r_i = 1). The guard floors means at 1e-12 before the ratio so a
    perfectly fit component cannot divide by zero; with the guard off a
    non-positive mean is an error.
    """
    missing = [c for c in state.enabled if c not in epoch_means]
    if missing:
        raise ValueError(f"epoch_means missing components {missing}")
    cleaned = {}
    for c in state.enabled:
        v = float(epoch_means[c])
        if not math.isfinite(v) or v < 0.0:
            raise ValueError(f"degenerate loss history: {c} = {v}")
        if v == 0.0 and not state.guard:
            raise ValueError(f"degenerate loss history: {c} = 0")
        cleaned[c] = v

    history = {c: state.history[c] + (cleaned[c],) for c in state.enabled}
    weights = {c: 1.0 for c in state.enabled}
    scoped = state.scoped
    t = len(history[state.enabled[0]])
    if scoped and t >= 2:
        ratios = []
        for c in scoped:
            prev, prev2 = history[c][-1], history[c][-2]
            if state.guard:
                prev, prev2 = max(prev, GUARD_FLOOR), max(prev2, GUARD_FLOOR)
            ratios.append(prev / prev2)
        z = np.asarray(ratios, dtype=np.float64) / state.temperature
        z -= z.max()  # shift-invariant softmax, no overflow for wild ratios
        e = np.exp(z)
        soft = e / e.sum()
        for c, w in zip(scoped, len(scoped) * soft):
            weights[c] = float(w)
    return replace(state, history=history, weights=weights)


# ------------------------------------------------------------ composite ----

@dataclass(frozen=True)
class LossBreakdown:
    """Raw per-component values and the weighted total of one pass."""

    values: dict[LossComponentId, float]
    enabled: tuple[LossComponentId, ...]
    total: float

    def __post_init__(self):
        for c in self.enabled:
            if c not in self.values:
                raise ValueError(f"breakdown missing enabled component {c}")


def _weighted_sum(terms: list[tuple[float, Var]]) -> Var:
    acc = None
    for w, v in terms:
        t = mul_const(v, w)
        acc = t if acc is None else add(acc, t)
    return acc


def composite_loss(sr: Var, hr: np.ndarray, lr: np.ndarray, state: DwaState,
                   scale: int, sr_taps: dict[str, Var] | None = None,
                   target_taps: dict[str, np.ndarray] | None = None
                   ) -> tuple[Var, LossBreakdown]:
    """Weighted sum of the enabled components over one batch.

    sr is the (N, C, H, W) model output Var; hr/lr the matching
    references; sr_taps/target_taps the detector taps of sr and of the
    HR targets (NCHW, equal shapes), required iff a task component is
    enabled. Returns the differentiable total and a float breakdown.
    """
    enabled = state.enabled
    needs_taps = any(c in TASK_COMPONENTS for c in enabled)
    if needs_taps and (sr_taps is None or target_taps is None):
        raise ValueError("task components enabled but detector taps not supplied")

    parts: dict[LossComponentId, Var] = {}
    if LossComponentId.L2_HR in enabled:
        parts[LossComponentId.L2_HR] = l2_hr(sr, hr)
    if LossComponentId.L2_LR in enabled:
        parts[LossComponentId.L2_LR] = l2_lr(sr, lr, scale)
    if LossComponentId.TASK_DEEP in enabled:
        parts[LossComponentId.TASK_DEEP] = task_l1(sr_taps["deep"], target_taps["deep"])
    if LossComponentId.TASK_OUT in enabled:
        out_sr = concat([sr_taps["out_coords"], sr_taps["out_scores"]], axis=1)
        out_tgt = np.concatenate([target_taps["out_coords"], target_taps["out_scores"]], axis=1)
        parts[LossComponentId.TASK_OUT] = task_l1(out_sr, out_tgt)

    total_var = _weighted_sum([(state.weights[c], parts[c]) for c in enabled])
    values = {c: float(parts[c].data) for c in enabled}
    total = float(sum(state.weights[c] * values[c] for c in enabled))
    return total_var, LossBreakdown(values=values, enabled=enabled, total=total)
