"""Experiment harness: wires stream, learner and reset policy into
long-horizon runs, logs per-step metrics, and compares policies across seeds.

Randomness is split into channels so the policy choice can never perturb the
data: batches derive from (seed, batch index) alone, the schedule from its
own channel, and learner init/pretraining from a third.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .flip_signal import FlipSignalState, observe_batch
from .learner import (
    DivergenceError,
    EntropyMin,
    ModelState,
    RobustPseudoLabel,
    adapt_batch,
    pretrain_source,
)
from .policy import ResetPolicy, policy_name as _policy_label, policy_step
from .stream import DomainSchedule, SourceDistribution, make_schedule, sample_batch

_LEARNER_CHANNEL = 2

CSV_HEADER = "t,domain,accuracy,lf_raw,lf_ema,lf_min,slope,threshold,reset,lambda"

__all__ = [
    "CSV_HEADER",
    "LogRow",
    "ExperimentLog",
    "ComparisonSummary",
    "build_model",
    "build_schedule",
    "run_experiment",
    "compare_policies",
    "export_log",
    "import_log_jsonl",
]


@dataclass(frozen=True)
class LogRow:
    t: int
    domain: int
    accuracy: float
    lf_raw: float
    lf_ema: float
    lf_min: float
    slope: float | None
    threshold: float | None
    reset: int
    lam: float | None


@dataclass
class ExperimentLog:
    """Per-step rows for one run, plus abort marker when a run diverged."""

    policy_name: str
    seed: int
    rows: list[LogRow] = field(default_factory=list)
    aborted_at: int | None = None

    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.rows]))

    def final_window_accuracy(self, fraction: float = 0.1) -> float:
        n = max(1, int(round(fraction * len(self.rows))))
        return float(np.mean([r.accuracy for r in self.rows[-n:]]))

    def reset_count(self) -> int:
        return sum(r.reset for r in self.rows)

    def reset_steps(self) -> list[int]:
        return [r.t for r in self.rows if r.reset]


def _loss_from_config(config: ExperimentConfig):
    if config.learner.loss == "rpl":
        return RobustPseudoLabel(q=config.learner.q)
    return EntropyMin()


def build_schedule(config: ExperimentConfig, seed: int) -> DomainSchedule:
    """Per-seed schedule; an explicit domain list in the config overrides
    pseudo-random generation but keeps the seed for batch sampling."""
    sc = config.stream
    if sc.domains is not None:
        return DomainSchedule(
            domains=sc.domains,
            batches_per_domain=sc.batches_per_domain,
            transition=sc.transition,
            seed=seed,
        )
    return make_schedule(
        num_domains=sc.num_domains,
        batches_per_domain=sc.batches_per_domain,
        transition=sc.transition,
        seed=seed,
        severity_ranges=sc.severity_ranges,
    )


def build_model(config: ExperimentConfig, seed: int) -> tuple[ModelState, float]:
    """Pretrain the source classifier for one seed; returns (model, holdout accuracy)."""
    source = SourceDistribution(
        n_classes=config.stream.n_classes,
        n_features=config.stream.n_features,
        class_separation=config.stream.class_separation,
    )
    rng = np.random.default_rng([seed, _LEARNER_CHANNEL])
    pre = config.learner.pretrain
    features, labels = source.sample(pre.samples_per_class * source.n_classes, rng)
    model, holdout = pretrain_source(
        features,
        labels,
        n_classes=source.n_classes,
        epochs=pre.epochs,
        learning_rate=pre.learning_rate,
        rng=rng,
        holdout_fraction=pre.holdout_fraction,
        adapt_learning_rate=config.learner.learning_rate,
        adapt_momentum=config.learner.momentum,
    )
    return model, holdout


def _policy_warmup(policy: ResetPolicy) -> int:
    trigger = getattr(policy, "trigger", None)
    return trigger.warmup_steps if trigger is not None else 10


def run_experiment(
    config: ExperimentConfig,
    seed: int,
    policy: ResetPolicy | None = None,
    policy_name: str | None = None,
) -> ExperimentLog:
    """One deterministic run: per batch, adapt, score the flip signal, let the
    policy act, and log one row.

    Raises :class:`DivergenceError` (carrying the partial log and the failing
    step) if the loss or parameters go non-finite.
    """
    policy = config.policy if policy is None else policy
    if policy_name is None:
        policy_name = _policy_label(policy)
    source = SourceDistribution(
        n_classes=config.stream.n_classes,
        n_features=config.stream.n_features,
        class_separation=config.stream.class_separation,
    )
    model, _ = build_model(config, seed)
    schedule = build_schedule(config, seed)
    loss = _loss_from_config(config)
    state = FlipSignalState(alpha=0.5, warmup_steps=_policy_warmup(policy))

    log = ExperimentLog(policy_name=policy_name, seed=seed)
    for t in range(1, schedule.horizon + 1):
        batch = sample_batch(schedule, t, source, config.batch_size)
        try:
            # downstream guards (softmax, confidence bounds, EMA) raise
            # ValueError once the numerics blow up
            prev_pred, curr_pred = adapt_batch(model, batch.features, loss)
            if not np.all(np.isfinite(model.theta)):
                raise ValueError(f"non-finite parameters at step {t}")
            accuracy = float(np.mean(curr_pred.classes == batch.labels))
            _, raw = observe_batch(prev_pred, curr_pred, normalize=config.normalize_flip)
            state.update_ema(raw)
        except ValueError as exc:
            log.aborted_at = t
            raise DivergenceError(str(exc), step=t, log=log) from exc
        state.update_min()
        # capture signal values before a reset clears them
        lf_ema, lf_min = state.lf_ema, state.lf_min
        decision = policy_step(policy, state, model)
        log.rows.append(
            LogRow(
                t=t,
                domain=batch.domain_index,
                accuracy=accuracy,
                lf_raw=raw,
                lf_ema=lf_ema,
                lf_min=lf_min,
                slope=decision.slope,
                threshold=decision.threshold,
                reset=int(decision.reinitialize),
                lam=decision.lam,
            )
        )
    return log


@dataclass
class ComparisonSummary:
    """Per-(policy, seed) stats plus aggregate mean +/- std across seeds."""

    seeds: tuple[int, ...]
    cells: dict[str, dict[int, dict]]  # policy -> seed -> stats

    def aggregate(self, policy: str, key: str) -> tuple[float, float]:
        values = [
            self.cells[policy][s][key]
            for s in self.seeds
            if not self.cells[policy][s].get("failed")
        ]
        if not values:
            return float("nan"), float("nan")
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return mean, std

    def table(self) -> str:
        """Policy rows with mean +/- std columns, accuracies in percent."""
        lines = [f"{'policy':<16} {'mean_acc':>16} {'final_acc':>16} {'resets':>8}"]
        for name in self.cells:
            failed = [s for s in self.seeds if self.cells[name][s].get("failed")]
            m, ms = self.aggregate(name, "mean_accuracy")
            f, fs = self.aggregate(name, "final_accuracy")
            r, _ = self.aggregate(name, "reset_count")
            row = (
                f"{name:<16} {100 * m:>8.2f} ± {100 * ms:<5.2f} "
                f"{100 * f:>8.2f} ± {100 * fs:<5.2f} {r:>8.1f}"
            )
            if failed:
                row += f"  [diverged: seeds {failed}]"
            lines.append(row)
        return "\n".join(lines)


def compare_policies(
    config: ExperimentConfig,
    policies: dict[str, ResetPolicy] | None = None,
    seeds: tuple[int, ...] | None = None,
) -> ComparisonSummary:
    """Run every (policy, seed) cell on bit-identical per-seed streams.

    A diverging cell is marked failed rather than sinking the comparison.
    """
    policies = config.policies if policies is None else policies
    if policies is None or len(policies) < 2:
        raise ValueError("compare_policies needs at least two policies")
    seeds = config.seeds if seeds is None else tuple(seeds)

    cells: dict[str, dict[int, dict]] = {name: {} for name in policies}
    for name, policy in policies.items():
        for seed in seeds:
            try:
                log = run_experiment(config, seed, policy=policy, policy_name=name)
            except DivergenceError as exc:
                cells[name][seed] = {"failed": True, "aborted_at": exc.step}
                continue
            cells[name][seed] = {
                "mean_accuracy": log.mean_accuracy(),
                "final_accuracy": log.final_window_accuracy(),
                "reset_count": log.reset_count(),
            }
    return ComparisonSummary(seeds=seeds, cells=cells)


def _g9(x: float) -> str:
    return f"{x:.9g}"


def _opt(x: float | None) -> str:
    return "" if x is None else _g9(x)


def export_log(log: ExperimentLog, path: str | Path, fmt: str | None = None) -> Path:
    """Write a log as CSV or JSON-lines; format inferred from the suffix."""
    path = Path(path)
    if fmt is None:
        fmt = {".csv": "csv", ".jsonl": "jsonl"}.get(path.suffix.lower())
        if fmt is None:
            raise ValueError(f"cannot infer log format from {path.name!r}; pass fmt=csv|jsonl")
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"format must be csv|jsonl, got {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fmt == "csv":
            fh.write(CSV_HEADER + "\n")
            for r in log.rows:
                fh.write(
                    f"{r.t},{r.domain},{_g9(r.accuracy)},{_g9(r.lf_raw)},{_g9(r.lf_ema)},"
                    f"{_g9(r.lf_min)},{_opt(r.slope)},{_opt(r.threshold)},{r.reset},{_opt(r.lam)}\n"
                )
        else:
            meta = {"policy": log.policy_name, "seed": log.seed, "aborted_at": log.aborted_at}
            fh.write(json.dumps(meta) + "\n")
            for r in log.rows:
                fh.write(
                    json.dumps(
                        {
                            "t": r.t,
                            "domain": r.domain,
                            "accuracy": r.accuracy,
                            "lf_raw": r.lf_raw,
                            "lf_ema": r.lf_ema,
                            "lf_min": r.lf_min,
                            "slope": r.slope,
                            "threshold": r.threshold,
                            "reset": r.reset,
                            "lambda": r.lam,
                        }
                    )
                    + "\n"
                )
    return path


def import_log_jsonl(path: str | Path) -> ExperimentLog:
    """Inverse of the JSON-lines export; field-for-field round trip."""
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line]
    if not lines:
        raise ValueError(f"{path}: empty log file")
    meta = json.loads(lines[0])
    log = ExperimentLog(
        policy_name=meta["policy"], seed=int(meta["seed"]), aborted_at=meta["aborted_at"]
    )
    for line in lines[1:]:
        d = json.loads(line)
        log.rows.append(
            LogRow(
                t=int(d["t"]),
                domain=int(d["domain"]),
                accuracy=d["accuracy"],
                lf_raw=d["lf_raw"],
                lf_ema=d["lf_ema"],
                lf_min=d["lf_min"],
                slope=d["slope"],
                threshold=d["threshold"],
                reset=int(d["reset"]),
                lam=d["lambda"],
            )
        )
    return log
