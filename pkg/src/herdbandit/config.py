"""Experiment-config documents: YAML schema, validation, and named presets.

A config document is a single YAML (or JSON) mapping with a versioned
schema. Presets cover the standard synthetic grids (dimension in
{5, 10, 15, 20} at unit noise; noise variance in {0.5, 1.0, 1.5, 2.0} at
dimension 10) plus the paper-scale horizon and the chain-length band used
for exact-versus-MCMC comparisons.
"""

from __future__ import annotations

from pathlib import Path

import yaml

from .env import HistoryPolicy
from .harness import ConfigError, ExperimentConfig
from .policies import PolicySpec

SCHEMA_VERSION = 1

_EXPERIMENT_KEYS = {
    "horizon", "n_arms", "dimension", "noise_variance", "conformity",
    "history_override", "n_seeds", "seeds", "history_policy", "source",
    "root_seed", "jobs",
}

_POLICY_KEYS = {"kind", "name", "settings"}


def config_from_dict(document: dict) -> ExperimentConfig:
    """Validate a parsed config document and build the experiment config."""
    if not isinstance(document, dict):
        raise ConfigError("config document must be a mapping")
    version = document.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"field 'schema_version': expected {SCHEMA_VERSION}, got {version!r}"
        )
    experiment = document.get("experiment", {})
    if not isinstance(experiment, dict):
        raise ConfigError("field 'experiment': must be a mapping")
    unknown = set(experiment) - _EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"field 'experiment': unknown keys {sorted(unknown)}")

    policies_doc = document.get("policies")
    if not isinstance(policies_doc, list) or not policies_doc:
        raise ConfigError("field 'policies': must be a non-empty list")
    specs = []
    for i, entry in enumerate(policies_doc):
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ConfigError(f"field 'policies[{i}]': needs a 'kind'")
        unknown = set(entry) - _POLICY_KEYS
        if unknown:
            raise ConfigError(f"field 'policies[{i}]': unknown keys {sorted(unknown)}")
        specs.append(
            PolicySpec(
                kind=str(entry["kind"]),
                name=str(entry.get("name", "")),
                settings=dict(entry.get("settings", {})),
            )
        )

    kwargs = dict(experiment)
    conformity = kwargs.get("conformity")
    if conformity == "sample-per-seed":
        kwargs["conformity"] = None
    elif conformity is not None:
        try:
            kwargs["conformity"] = float(conformity)
        except (TypeError, ValueError):
            raise ConfigError(
                "field 'experiment.conformity': expected a number or "
                f"'sample-per-seed', got {conformity!r}"
            ) from None
    if "history_policy" in kwargs:
        try:
            kwargs["history_policy"] = HistoryPolicy.from_name(
                str(kwargs["history_policy"])
            )
        except ValueError as exc:
            raise ConfigError(f"field 'experiment.history_policy': {exc}") from None
    try:
        return ExperimentConfig(policies=tuple(specs), **kwargs)
    except TypeError as exc:
        raise ConfigError(f"field 'experiment': {exc}") from None


def load_config_file(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return config_from_dict(document)


def _baseline_policies() -> list[dict]:
    # Synthetic presets give TS-Conf the moment-matched prior of the
    # generator; the bias-blind baselines keep their vanilla priors.
    return [
        {"kind": "ts-conf", "settings": {"prior": "synthetic-matched"}},
        {"kind": "linucb-conf"},
        {"kind": "linucb"},
        {"kind": "ts"},
    ]


def _synthetic(dimension: int, noise_variance: float, **overrides) -> dict:
    experiment = {
        "horizon": 10_000,
        "n_arms": 10,
        "dimension": dimension,
        "noise_variance": noise_variance,
        "conformity": "sample-per-seed",
        "n_seeds": 10,
        "history_policy": "static",
        "source": "synthetic",
    }
    experiment.update(overrides.pop("experiment", {}))
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": experiment,
        "policies": overrides.pop("policies", _baseline_policies()),
    }


def _mcmc_band() -> dict:
    policies = [{"kind": "ts-conf", "settings": {"prior": "synthetic-matched"}}]
    for n in (10, 50, 100):
        policies.append(
            {"kind": "ts-conf-mcmc", "name": f"TS-ConfMCMC-N{n}",
             "settings": {"n_iterations": n}}
        )
    return _synthetic(10, 1.0, experiment={"n_seeds": 5}, policies=policies)


PRESETS: dict[str, dict] = {
    "default": _synthetic(10, 1.0),
    "paper-synthetic-default": _synthetic(
        10, 1.0,
        experiment={"horizon": 50_000},
        policies=_baseline_policies()
        + [{"kind": "ts-conf-mcmc", "settings": {"n_iterations": 100}}],
    ),
    "synthetic-d5": _synthetic(5, 1.0),
    "synthetic-d10": _synthetic(10, 1.0),
    "synthetic-d15": _synthetic(15, 1.0),
    "synthetic-d20": _synthetic(20, 1.0),
    "synthetic-noise-0.5": _synthetic(10, 0.5),
    "synthetic-noise-1.0": _synthetic(10, 1.0),
    "synthetic-noise-1.5": _synthetic(10, 1.5),
    "synthetic-noise-2.0": _synthetic(10, 2.0),
    "mcmc-band": _mcmc_band(),
    # No-herding degenerate world: conformity zero and nothing displayed.
    "degenerate-alpha-0": _synthetic(
        10, 1.0,
        experiment={"conformity": 0.0, "history_override": 0.0},
        policies=[{"kind": "ts-conf"}, {"kind": "ts"}],
    ),
    "degenerate-alpha-0.95": _synthetic(
        10, 1.0,
        experiment={"conformity": 0.95},
        policies=_baseline_policies()
        + [{"kind": "ts-conf-mcmc", "settings": {"n_iterations": 50}}],
    ),
}


def load_preset(name: str, **experiment_overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}"
        )
    document = yaml.safe_load(yaml.safe_dump(PRESETS[name]))  # deep copy
    document["experiment"].update(experiment_overrides)
    return config_from_dict(document)
