"""Experiment configuration: JSON schema, parsing, validation.

See README for an annotated example. Unknown keys are rejected so config
typos fail loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .policy import (
    BalancedReset,
    FixedInterval,
    HardReset,
    NoReset,
    RandomTiming,
    ResetPolicy,
    TriggerConfig,
)
from .stream import CorruptionKind, Domain, Transition

__all__ = [
    "ConfigError",
    "StreamConfig",
    "PretrainConfig",
    "LearnerConfig",
    "ExperimentConfig",
    "parse_policy",
    "load_config",
    "config_from_dict",
]


class ConfigError(ValueError):
    """Invalid or missing configuration."""


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass(frozen=True)
class StreamConfig:
    num_domains: int = 100
    batches_per_domain: int = 200
    transition: Transition = Transition()
    n_classes: int = 4
    n_features: int = 16
    class_separation: float = 2.5
    severity_ranges: dict | None = None
    domains: tuple[Domain, ...] | None = None  # explicit schedule override


@dataclass(frozen=True)
class PretrainConfig:
    samples_per_class: int = 500
    epochs: int = 150
    learning_rate: float = 0.5
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class LearnerConfig:
    loss: str = "entropy"  # entropy | rpl
    q: float = 0.8
    learning_rate: float = 0.05
    momentum: float = 0.9
    pretrain: PretrainConfig = PretrainConfig()

    def __post_init__(self) -> None:
        if self.loss not in ("entropy", "rpl"):
            raise ConfigError(f"learner.loss must be entropy|rpl, got {self.loss!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamConfig = StreamConfig()
    learner: LearnerConfig = LearnerConfig()
    policy: ResetPolicy = NoReset()
    policies: dict[str, ResetPolicy] | None = None
    batch_size: int = 64
    seeds: tuple[int, ...] = (0,)
    normalize_flip: bool = True
    output: str | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if len(self.seeds) < 1:
            raise ConfigError("need at least one seed")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")


def parse_policy(d: dict, batch_size: int) -> ResetPolicy:
    """Build a policy from its config dict; beta's sample clock defaults to
    one batch = ``batch_size`` samples."""
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"policy must be an object with a 'kind', got {d!r}")
    kind = d["kind"]
    try:
        if kind == "no_reset":
            _check_keys(d, {"kind"}, "no_reset policy")
            return NoReset()
        if kind == "fixed_interval":
            _check_keys(d, {"kind", "period"}, "fixed_interval policy")
            return FixedInterval(period=int(d["period"]))
        if kind == "random_timing":
            _check_keys(d, {"kind", "times"}, "random_timing policy")
            return RandomTiming(times=tuple(int(x) for x in d["times"]))
        if kind in ("hard_reset", "abr"):
            _check_keys(
                d,
                {"kind", "beta", "warmup_steps", "time_unit_scale", "force_lambda"},
                f"{kind} policy",
            )
            trigger = TriggerConfig(
                beta=float(d.get("beta", 2e-6)),
                warmup_steps=int(d.get("warmup_steps", 10)),
                time_unit_scale=float(d.get("time_unit_scale", batch_size)),
            )
            if kind == "hard_reset":
                if "force_lambda" in d:
                    raise ConfigError("force_lambda only applies to the abr policy")
                return HardReset(trigger=trigger)
            fl = d.get("force_lambda")
            return BalancedReset(trigger=trigger, force_lambda=None if fl is None else float(fl))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad {kind} policy: {exc}") from exc
    raise ConfigError(
        f"unknown policy kind {kind!r}; expected one of "
        "no_reset|fixed_interval|random_timing|hard_reset|abr"
    )


def _parse_transition(value) -> Transition:
    if isinstance(value, str):
        if value != "abrupt":
            raise ConfigError(f"string transition must be 'abrupt', got {value!r}")
        return Transition()
    if isinstance(value, dict):
        _check_keys(value, {"kind", "ramp_batches"}, "stream.transition")
        return Transition(kind=value.get("kind", "abrupt"), ramp_batches=int(value.get("ramp_batches", 0)))
    raise ConfigError(f"bad transition: {value!r}")


def _parse_stream(d: dict) -> StreamConfig:
    _check_keys(
        d,
        {
            "num_domains",
            "batches_per_domain",
            "transition",
            "n_classes",
            "n_features",
            "class_separation",
            "severity_ranges",
            "domains",
        },
        "stream",
    )
    ranges = None
    if d.get("severity_ranges") is not None:
        ranges = {}
        for key, pair in d["severity_ranges"].items():
            ranges[CorruptionKind(key)] = (float(pair[0]), float(pair[1]))
    domains = None
    if d.get("domains") is not None:
        domains = tuple(
            Domain(CorruptionKind(x["kind"]), float(x["severity"])) for x in d["domains"]
        )
    return StreamConfig(
        num_domains=int(d.get("num_domains", 100)),
        batches_per_domain=int(d.get("batches_per_domain", 200)),
        transition=_parse_transition(d.get("transition", "abrupt")),
        n_classes=int(d.get("n_classes", 4)),
        n_features=int(d.get("n_features", 16)),
        class_separation=float(d.get("class_separation", 2.5)),
        severity_ranges=ranges,
        domains=domains,
    )


def _parse_learner(d: dict) -> LearnerConfig:
    _check_keys(d, {"loss", "q", "learning_rate", "momentum", "pretrain"}, "learner")
    pre = d.get("pretrain", {})
    _check_keys(
        pre, {"samples_per_class", "epochs", "learning_rate", "holdout_fraction"}, "learner.pretrain"
    )
    return LearnerConfig(
        loss=d.get("loss", "entropy"),
        q=float(d.get("q", 0.8)),
        learning_rate=float(d.get("learning_rate", 0.05)),
        momentum=float(d.get("momentum", 0.9)),
        pretrain=PretrainConfig(
            samples_per_class=int(pre.get("samples_per_class", 500)),
            epochs=int(pre.get("epochs", 150)),
            learning_rate=float(pre.get("learning_rate", 0.5)),
            holdout_fraction=float(pre.get("holdout_fraction", 0.2)),
        ),
    )


def config_from_dict(d: dict) -> ExperimentConfig:
    _check_keys(
        d,
        {
            "stream",
            "learner",
            "policy",
            "policies",
            "batch_size",
            "seeds",
            "normalize_flip",
            "output",
        },
        "config",
    )
    try:
        batch_size = int(d.get("batch_size", 64))
        policies = None
        if "policies" in d:
            policies = {
                name: parse_policy(p, batch_size) for name, p in d["policies"].items()
            }
        return ExperimentConfig(
            stream=_parse_stream(d.get("stream", {})),
            learner=_parse_learner(d.get("learner", {})),
            policy=parse_policy(d.get("policy", {"kind": "no_reset"}), batch_size),
            policies=policies,
            batch_size=batch_size,
            seeds=tuple(int(s) for s in d.get("seeds", [0])),
            normalize_flip=bool(d.get("normalize_flip", True)),
            output=d.get("output"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(data)
