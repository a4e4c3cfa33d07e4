"""Reset policies: when to re-initialize an adapting model, and how much
source-model weight to restore when doing so.

The adaptive trigger watches the smoothed flip trajectory and fires when the
slope from its running minimum to the current value clears a threshold that
shrinks with the square root of the elapsed duration. Firing triggers a
shrink-restore: new weights are a convex blend of the frozen source weights
and the adapted weights, with the blend ratio set by how far the signal rose
above its minimum. Clock-based baselines (fixed interval, preset timings)
and a full-restore variant share the same machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flip_signal import FlipSignalState
from .learner import ModelState

LAMBDA_EPS = 1e-12

__all__ = [
    "TriggerConfig",
    "PolicyDecision",
    "NoReset",
    "FixedInterval",
    "RandomTiming",
    "HardReset",
    "BalancedReset",
    "ResetPolicy",
    "slope",
    "trigger_check",
    "compute_lambda",
    "blend_weights",
    "policy_step",
]


@dataclass(frozen=True)
class TriggerConfig:
    """Slope-trigger parameters.

    ``beta`` is quoted per sample; ``time_unit_scale`` (samples per step,
    normally the batch size) converts the state's step clock into sample
    units before the threshold comparison.
    """

    beta: float = 2e-6
    warmup_steps: int = 10
    time_unit_scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if not self.time_unit_scale > 0:
            raise ValueError("time_unit_scale must be > 0")


@dataclass(frozen=True)
class PolicyDecision:
    """Per-step verdict. ``lam`` is the restore ratio, present iff re-initializing."""

    reinitialize: bool
    lam: float | None = None
    slope: float | None = None
    threshold: float | None = None
    delta_lf: float | None = None
    delta_t: int | None = None

    def __post_init__(self) -> None:
        if self.reinitialize != (self.lam is not None):
            raise ValueError("lam must be present exactly when re-initializing")
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam outside [0, 1]: {self.lam}")


@dataclass(frozen=True)
class NoReset:
    """Adapt forever; never re-initialize."""


@dataclass(frozen=True)
class FixedInterval:
    """Full restore every ``period`` steps, regardless of the signal."""

    period: int

    def __post_init__(self) -> None:
        if self.period < 1:
            raise ValueError("period must be >= 1")


@dataclass(frozen=True)
class RandomTiming:
    """Full restore at a preset, strictly increasing list of step indices."""

    times: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")


@dataclass(frozen=True)
class HardReset:
    """Adaptive trigger, but restore the source weights entirely."""

    trigger: TriggerConfig = TriggerConfig()


@dataclass(frozen=True)
class BalancedReset:
    """Adaptive trigger with shrink-restore blending.

    ``force_lambda`` overrides the adaptive restore ratio; with 1.0 this
    reproduces :class:`HardReset` (ablation knob).
    """

    trigger: TriggerConfig = TriggerConfig()
    force_lambda: float | None = None

    def __post_init__(self) -> None:
        if self.force_lambda is not None and not 0.0 <= self.force_lambda <= 1.0:
            raise ValueError("force_lambda outside [0, 1]")


ResetPolicy = NoReset | FixedInterval | RandomTiming | HardReset | BalancedReset

_POLICY_NAMES = {
    NoReset: "no_reset",
    FixedInterval: "fixed_interval",
    RandomTiming: "random_timing",
    HardReset: "hard_reset",
    BalancedReset: "abr",
}


def policy_name(policy: ResetPolicy) -> str:
    """Canonical config-file name of a policy variant."""
    return _POLICY_NAMES[type(policy)]


def slope(state: FlipSignalState) -> float | None:
    """Rise per step from the trajectory minimum to the current value.

    Returns None while undefined (unseeded state or zero elapsed steps);
    callers must treat that as "no trigger".
    """
    if state.lf_ema is None or state.lf_min is None or state.t_min is None:
        return None
    delta_t = state.t - state.t_min
    if delta_t < 1:
        return None
    return (state.lf_ema - state.lf_min) / delta_t


def threshold_value(state: FlipSignalState, cfg: TriggerConfig) -> float | None:
    """Per-step slope threshold: beta * sqrt(scale) / sqrt(delta_t).

    Comparing the per-step slope against this value is the same inequality
    as comparing the per-sample slope against beta / sqrt(delta_t * scale).
    """
    if state.t_min is None:
        return None
    delta_t = state.t - state.t_min
    if delta_t < 1:
        return None
    return cfg.beta * math.sqrt(cfg.time_unit_scale) / math.sqrt(delta_t)


def trigger_check(state: FlipSignalState, cfg: TriggerConfig) -> bool:
    """True iff the smoothed trajectory rose fast enough since its minimum.

    Evaluates ``delta_lf > beta * sqrt(delta_t * scale)``, which is
    algebraically the slope-vs-threshold inequality rearranged to avoid
    the division; always false during the post-reset warm-up window.
    """
    if state.lf_ema is None or state.lf_min is None or state.t_min is None:
        return False
    if state.steps_since_reset <= cfg.warmup_steps:
        return False
    delta_t = state.t - state.t_min
    if delta_t < 1:
        return False
    delta_lf = state.lf_ema - state.lf_min
    return delta_lf > cfg.beta * math.sqrt(delta_t * cfg.time_unit_scale)


def compute_lambda(state: FlipSignalState) -> float:
    """Restore ratio: current value over (current + minimum), both clamped at 0.

    Degenerate all-zero case falls back to a balanced 0.5.
    """
    lf_curr = max(float(state.lf_ema), 0.0)
    lf_min = max(float(state.lf_min), 0.0)
    if lf_curr <= LAMBDA_EPS and lf_min <= LAMBDA_EPS:
        return 0.5
    return lf_curr / (lf_curr + lf_min)


def blend_weights(
    theta_source: np.ndarray, theta_prev: np.ndarray, lam: float
) -> np.ndarray:
    """Convex blend ``lam*source + (1-lam)*prev``, element-wise.

    The endpoints return exact copies so a full restore is bitwise equal to
    the source weights.
    """
    if theta_source.shape != theta_prev.shape:
        raise ValueError(
            f"shape mismatch: {theta_source.shape} vs {theta_prev.shape}"
        )
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam outside [0, 1]: {lam}")
    if lam == 0.0:
        return theta_prev.copy()
    if lam == 1.0:
        return theta_source.copy()
    return lam * theta_source + (1.0 - lam) * theta_prev


def _signal_diagnostics(
    state: FlipSignalState, cfg: TriggerConfig | None
) -> tuple[float | None, float | None, float | None, int | None]:
    s = slope(state)
    if s is None or state.lf_ema is None or state.lf_min is None or state.t_min is None:
        return None, None, None, None
    thr = threshold_value(state, cfg) if cfg is not None else None
    return s, thr, state.lf_ema - state.lf_min, state.t - state.t_min


def policy_step(
    policy: ResetPolicy, state: FlipSignalState, model: ModelState
) -> PolicyDecision:
    """Evaluate a policy for the step just observed; apply the verdict.

    On a re-initialization the model's weights are blended toward the source,
    its previous-step snapshot and optimizer state start over, and the flip
    signal is cleared. Called once per adapted batch, after the signal update.
    """
    cfg = getattr(policy, "trigger", None)
    s, thr, delta_lf, delta_t = _signal_diagnostics(state, cfg)

    lam: float | None = None
    if isinstance(policy, NoReset):
        pass
    elif isinstance(policy, FixedInterval):
        if state.t >= 1 and state.t % policy.period == 0:
            lam = 1.0
    elif isinstance(policy, RandomTiming):
        if state.t in policy.times:
            lam = 1.0
    elif isinstance(policy, HardReset):
        if trigger_check(state, policy.trigger):
            lam = 1.0
    elif isinstance(policy, BalancedReset):
        if trigger_check(state, policy.trigger):
            lam = policy.force_lambda if policy.force_lambda is not None else compute_lambda(state)
    else:
        raise TypeError(f"unknown policy: {policy!r}")

    if lam is None:
        return PolicyDecision(
            reinitialize=False, slope=s, threshold=thr, delta_lf=delta_lf, delta_t=delta_t
        )

    model.replace_weights(blend_weights(model.theta_source, model.theta, lam))
    state.reset_signal()
    return PolicyDecision(
        reinitialize=True, lam=lam, slope=s, threshold=thr, delta_lf=delta_lf, delta_t=delta_t
    )
