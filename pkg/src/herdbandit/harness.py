"""Experiment loop: run policies against simulated users and record regret.

Each run is one (policy, seed) pair with its own instance, noise stream,
and policy stream, all derived from the root seed, so replications are
independent, order-insensitive, and reproducible whether executed serially
or in parallel. Regret is always measured against the true expected
rewards, never against the biased feedback.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data_pipeline
from .env import ArmContext, Environment, HistoryPolicy, ModelParams
from .policies import PolicySpec, make_policy
from .rng import RoundStream, stream_seed, substream

TRACE_HEADER = "policy,seed,round,instant_regret,cumulative_regret"


class ConfigError(ValueError):
    """An experiment configuration violates its schema."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment suite.

    ``conformity`` is either a fixed level applied to every seed or None,
    meaning each seed draws its own level uniformly from [0, 1].
    ``source`` is "synthetic" or a path to a bandit-instance file.
    """

    horizon: int = 10_000
    n_arms: int = 10
    dimension: int = 10
    noise_variance: float = 1.0
    conformity: float | None = None
    history_override: float | None = None
    n_seeds: int = 10
    seeds: tuple[int, ...] | None = None
    policies: tuple[PolicySpec, ...] = ()
    history_policy: HistoryPolicy = HistoryPolicy.STATIC
    source: str = "synthetic"
    root_seed: int = 0
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.n_arms < 1:
            raise ConfigError(f"n_arms must be >= 1, got {self.n_arms}")
        if self.dimension < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.dimension}")
        if self.noise_variance <= 0.0:
            raise ConfigError(
                f"noise_variance must be > 0, got {self.noise_variance}"
            )
        if self.conformity is not None and not 0.0 <= self.conformity <= 1.0:
            raise ConfigError(f"conformity must lie in [0, 1], got {self.conformity}")
        if self.n_seeds < 1:
            raise ConfigError(f"n_seeds must be >= 1, got {self.n_seeds}")
        if not self.policies:
            raise ConfigError("at least one policy is required")
        object.__setattr__(self, "policies", tuple(self.policies))
        if self.seeds is not None:
            object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        labels = [spec.label() for spec in self.policies]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate policy labels in {labels}")

    def seed_list(self) -> tuple[int, ...]:
        if self.seeds is not None:
            return self.seeds
        return tuple(range(self.n_seeds))


@dataclass(frozen=True)
class RegretTrace:
    """Per-round instantaneous and cumulative regret for one run."""

    policy: str
    seed: int
    instant: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "instant", np.asarray(self.instant, dtype=float))
        object.__setattr__(self, "cumulative", np.asarray(self.cumulative, dtype=float))
        if self.instant.shape != self.cumulative.shape:
            raise ValueError("instant and cumulative traces must align")

    @property
    def horizon(self) -> int:
        return int(self.instant.size)

    @property
    def final_regret(self) -> float:
        return float(self.cumulative[-1]) if self.horizon else 0.0


def instantaneous_regret(
    params: ModelParams, offered: Sequence[ArmContext], chosen_arm_id: int
) -> float:
    """Gap between the best offered expected reward and the chosen one."""
    rewards = {c.arm_id: float(params.theta @ c.features) for c in offered}
    if chosen_arm_id not in rewards:
        raise ValueError(f"chosen arm {chosen_arm_id} was not offered")
    return max(rewards.values()) - rewards[chosen_arm_id]


def build_instance(
    config: ExperimentConfig, seed: int
) -> tuple[ModelParams, list[ArmContext]]:
    """Problem instance for one seed, drawn from the instance sub-stream.

    Synthetic sources redraw everything per seed (with the configured
    conformity override); file sources reuse the stored instance for every
    seed, leaving noise and policy randomness seed-specific.
    """
    if config.source == "synthetic":
        rng = substream(config.root_seed, "instance", seed)
        params, contexts = data_pipeline.generate_synthetic(
            config.dimension, config.n_arms, rng,
            noise_sd=float(np.sqrt(config.noise_variance)),
        )
    else:
        params, contexts = data_pipeline.load_instance(config.source)
        if params.dim != config.dimension or len(contexts) != config.n_arms:
            raise ConfigError(
                f"instance file {config.source} is d={params.dim}, "
                f"K={len(contexts)}; config expects d={config.dimension}, "
                f"K={config.n_arms}"
            )
    if config.conformity is not None:
        params = replace(params, alpha=float(config.conformity))
    if config.history_override is not None:
        contexts = [
            replace(c, historical_rating=float(config.history_override))
            for c in contexts
        ]
    return params, contexts


def run_single(config: ExperimentConfig, spec: PolicySpec, seed: int) -> RegretTrace:
    """One full interaction loop: offer all arms, select, observe, score.

    The policy stream is keyed by seed only, and so is the noise stream:
    every policy run on a seed sees the same per-round draws and the same
    noise sequence (common random numbers), which sharpens per-seed
    comparisons without coupling different seeds.
    """
    params, contexts = build_instance(config, seed)
    env = Environment(
        params=params,
        contexts=list(contexts),
        noise_rng=substream(config.root_seed, "noise", seed),
        history_policy=config.history_policy,
    )
    policy = make_policy(
        spec,
        dim=config.dimension,
        n_arms=config.n_arms,
        horizon=config.horizon,
        noise_variance=config.noise_variance,
        stream=RoundStream(stream_seed(config.root_seed, "policy", seed)),
        true_theta=params.theta,
    )
    true_rewards = env.true_rewards()
    best = float(true_rewards.max())
    reward_by_arm = {c.arm_id: float(r) for c, r in zip(contexts, true_rewards)}

    instant = np.empty(config.horizon)
    for t in range(config.horizon):
        offered = env.contexts
        arm = policy.select_arm(offered)
        _, record = env.step(arm, t + 1)
        policy.observe(record)
        instant[t] = best - reward_by_arm[arm]
    return RegretTrace(
        policy=spec.label(), seed=seed, instant=instant,
        cumulative=np.cumsum(instant),
    )


def _run_indexed(args: tuple[ExperimentConfig, PolicySpec, int]) -> RegretTrace:
    return run_single(*args)


def run_suite(config: ExperimentConfig) -> list[RegretTrace]:
    """Run the full (policy, seed) grid; output order is policy-major.

    With ``jobs > 1`` runs execute in worker processes. Each run is
    self-seeded, so schedules cannot change results. Failures are collected
    per run and reported together after the surviving runs complete.
    """
    tasks = [
        (config, spec, seed)
        for spec in config.policies
        for seed in config.seed_list()
    ]
    results: list[RegretTrace | None] = [None] * len(tasks)
    failures: list[str] = []
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = [pool.submit(_run_indexed, task) for task in tasks]
            for i, future in enumerate(futures):
                try:
                    results[i] = future.result()
                except Exception as exc:  # noqa: BLE001 - aggregated below
                    failures.append(
                        f"policy={tasks[i][1].label()} seed={tasks[i][2]}: {exc}"
                    )
    else:
        for i, task in enumerate(tasks):
            try:
                results[i] = _run_indexed(task)
            except Exception as exc:  # noqa: BLE001 - aggregated below
                failures.append(
                    f"policy={task[1].label()} seed={task[2]}: {exc}"
                )
    if failures:
        raise RuntimeError(
            "some runs failed:\n  " + "\n  ".join(failures)
        )
    return [trace for trace in results if trace is not None]


# -- trace and summary serialization ----------------------------------------

def trace_filename(trace: RegretTrace, config: ExperimentConfig) -> str:
    return (
        f"{trace.policy}__seed-{trace.seed}"
        f"__d-{config.dimension}__noise-{config.noise_variance:g}.csv"
    )


_TRACE_NAME_RE = re.compile(
    r"^(?P<policy>.+)__seed-(?P<seed>\d+)__d-(?P<dim>\d+)__noise-(?P<noise>[0-9.eE+-]+)\.csv$"
)


def parse_trace_filename(name: str) -> dict | None:
    """Facet metadata encoded in a trace filename, or None if foreign."""
    match = _TRACE_NAME_RE.match(name)
    if not match:
        return None
    return {
        "policy": match.group("policy"),
        "seed": int(match.group("seed")),
        "dimension": int(match.group("dim")),
        "noise_variance": float(match.group("noise")),
    }


def write_trace_csv(trace: RegretTrace, path: str | Path) -> None:
    """Emit one run as CSV: UTF-8, LF endings, 10 significant digits."""
    lines = [TRACE_HEADER]
    for t in range(trace.horizon):
        lines.append(
            f"{trace.policy},{trace.seed},{t + 1},"
            f"{trace.instant[t]:.10g},{trace.cumulative[t]:.10g}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_trace_csv(path: str | Path) -> RegretTrace:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.strip().split("\n")
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError(
            f"{path}: expected header {TRACE_HEADER!r}, got {lines[0]!r}"
        )
    policy, seed = "", 0
    instant, cumulative = [], []
    for line in lines[1:]:
        cells = line.split(",")
        policy, seed = cells[0], int(cells[1])
        instant.append(float(cells[3]))
        cumulative.append(float(cells[4]))
    return RegretTrace(
        policy=policy, seed=seed,
        instant=np.array(instant), cumulative=np.array(cumulative),
    )


def summarize(traces: Sequence[RegretTrace]) -> dict:
    """Per-policy mean and standard deviation of final cumulative regret.

    Finals are rounded to the CSV serialization precision first, so the
    summary is identical whether computed from live traces or re-read CSVs.
    """
    by_policy: dict[str, list[RegretTrace]] = {}
    for trace in traces:
        by_policy.setdefault(trace.policy, []).append(trace)
    policies = {}
    for policy in sorted(by_policy):
        finals = np.array([
            float(f"{t.final_regret:.10g}")
            for t in sorted(by_policy[policy], key=lambda t: t.seed)
        ])
        policies[policy] = {
            "n_seeds": int(finals.size),
            "final_regrets": [float(f"{v:.10g}") for v in finals],
            "mean_final_regret": float(f"{finals.mean():.10g}"),
            "std_final_regret": float(f"{finals.std(ddof=0):.10g}"),
        }
    return {"schema_version": 1, "policies": policies}


def write_summary_json(summary: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_suite_outputs(
    traces: Sequence[RegretTrace], config: ExperimentConfig, out_dir: str | Path
) -> dict:
    """Write per-run trace CSVs plus the summary JSON under ``out_dir``."""
    out = Path(out_dir)
    traces_dir = out / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    for trace in traces:
        write_trace_csv(trace, traces_dir / trace_filename(trace, config))
    summary = summarize(traces)
    write_summary_json(summary, out / "summary.json")
    return summary
