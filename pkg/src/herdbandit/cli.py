"""Command-line entry point.

Subcommands: ``simulate`` (write synthetic instance files), ``ingest``
(filter a ratings CSV), ``fit-mf`` (factorize ratings into an instance
file), ``run`` (execute an experiment suite), ``summarize`` (rebuild the
summary from trace CSVs). Exit codes: 0 success, 1 runtime failure,
2 usage or config error. All artifacts are pure functions of the inputs,
the config, and the seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path


from . import data_pipeline, harness
from .config import PRESETS, ConfigError, load_config_file, load_preset
from .harness import ExperimentConfig
from .rng import substream

JOBS_ENV_VAR = "HERDBANDIT_JOBS"


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment config file (YAML)")
    parser.add_argument(
        "--preset", choices=sorted(PRESETS), help="named built-in config"
    )
    parser.add_argument("--seed", type=int, default=None, help="override root seed")


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("exactly one of --config or --preset is required")
    if args.config:
        config = load_config_file(args.config)
    else:
        config = load_preset(args.preset)
    if args.seed is not None:
        config = replace(config, root_seed=int(args.seed))
    jobs = getattr(args, "jobs", None)
    if jobs is None:
        jobs = int(os.environ.get(JOBS_ENV_VAR, "1"))
    return replace(config, jobs=max(1, jobs))


def _print_summary_table(summary: dict) -> None:
    print(f"{'policy':<20} {'mean final regret':>18} {'std':>12} {'seeds':>6}")
    for policy, stats in summary["policies"].items():
        print(
            f"{policy:<20} {stats['mean_final_regret']:>18.2f} "
            f"{stats['std_final_regret']:>12.2f} {stats['n_seeds']:>6}"
        )


def cmd_run(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    traces = harness.run_suite(config)
    summary = harness.write_suite_outputs(traces, config, args.out)
    _print_summary_table(summary)
    print(f"wrote {len(traces)} traces under {args.out}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    out = Path(args.out) / "instance"
    out.mkdir(parents=True, exist_ok=True)
    for seed in config.seed_list():
        params, contexts = harness.build_instance(config, seed)
        path = out / f"synthetic_seed-{seed}.inst"
        data_pipeline.save_instance(
            path, params, contexts,
            meta={"source": "synthetic", "seed": seed,
                  "root_seed": config.root_seed},
        )
        print(f"wrote {path}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    column_map = None
    if any([args.user_col, args.item_col, args.rating_col, args.timestamp_col]):
        column_map = {
            "user_id": args.user_col or "user_id",
            "item_id": args.item_col or "item_id",
            "rating": args.rating_col or "rating",
            "timestamp": args.timestamp_col or "timestamp",
        }
    raw = data_pipeline.load_ratings_csv(args.ratings, column_map)
    filtered = data_pipeline.filter_dataset(raw, min_count=args.min_count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    filtered_path = out / "filtered.csv"
    filtered.frame.to_csv(filtered_path, index=False, lineterminator="\n")
    report = {
        "input": str(args.ratings),
        "min_count": args.min_count,
        "before": {"ratings": len(raw), "users": raw.n_users, "items": raw.n_items},
        "after": {
            "ratings": len(filtered),
            "users": filtered.n_users,
            "items": filtered.n_items,
        },
    }
    (out / "ingest_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(json.dumps(report, indent=2, sort_keys=True))
    print(f"wrote {filtered_path}")
    return 0


def cmd_fit_mf(args: argparse.Namespace) -> int:
    raw = data_pipeline.load_ratings_csv(args.ratings)
    data = data_pipeline.filter_dataset(raw, min_count=args.min_count)
    rng = substream(args.seed if args.seed is not None else 0, "fit-mf", args.dim)
    model = data_pipeline.fit_mf(
        data, args.dim, rng,
        learning_rate=args.learning_rate,
        regularization=args.regularization,
        epochs=args.epochs,
    )
    if args.user is not None:
        user_id = type(model.user_ids[0])(args.user)
    else:
        counts = data.user_counts()
        top = counts[counts == counts.max()].index
        user_id = sorted(top)[0]
    params, contexts, item_ids = data_pipeline.to_bandit_instance(
        model, user_id, args.noise_variance, n_arms=args.n_arms
    )
    out = Path(args.out) / "instance"
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.ratings).stem
    path = out / f"{stem}_d{args.dim}.inst"
    data_pipeline.save_instance(
        path, params, contexts, item_ids=item_ids,
        meta={
            "source": str(args.ratings),
            "user_id": str(user_id),
            "conformity": model.conformity,
            "dimension": args.dim,
        },
    )
    print(f"conformity estimate: {model.conformity:.4f}")
    print(f"wrote {path}")
    return 0


def cmd_summarize(args: argparse.Namespace) -> int:
    trace_dir = Path(args.traces)
    paths = sorted(trace_dir.glob("*.csv"))
    if not paths:
        raise ConfigError(f"no trace CSVs found under {trace_dir}")
    traces = [harness.read_trace_csv(p) for p in paths]
    summary = harness.summarize(traces)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_summary_json(summary, out / "summary.json")
    _print_summary_table(summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="herdbandit",
        description="Contextual bandits under herding-biased feedback",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment suite")
    _add_config_args(run)
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.add_argument(
        "--jobs", type=int, default=None,
        help=f"parallel worker processes (default ${JOBS_ENV_VAR} or 1)",
    )
    run.set_defaults(func=cmd_run)

    simulate = sub.add_parser("simulate", help="write synthetic instance files")
    _add_config_args(simulate)
    simulate.add_argument("--out", type=Path, required=True)
    simulate.set_defaults(func=cmd_simulate)

    ingest = sub.add_parser("ingest", help="filter a ratings CSV")
    ingest.add_argument("--ratings", type=Path, required=True)
    ingest.add_argument("--out", type=Path, required=True)
    ingest.add_argument("--min-count", type=int, default=10)
    ingest.add_argument("--user-col", help="source column holding user ids")
    ingest.add_argument("--item-col", help="source column holding item ids")
    ingest.add_argument("--rating-col", help="source column holding ratings")
    ingest.add_argument("--timestamp-col", help="source column holding timestamps")
    ingest.set_defaults(func=cmd_ingest)

    fit = sub.add_parser("fit-mf", help="factorize ratings into an instance file")
    fit.add_argument("--ratings", type=Path, required=True)
    fit.add_argument("--out", type=Path, required=True)
    fit.add_argument("--dim", type=int, default=10,
                     help="factor dimension (paper grid: 5, 10, 15, 20)")
    fit.add_argument("--n-arms", type=int, default=10)
    fit.add_argument("--noise-variance", type=float, default=1.0)
    fit.add_argument("--min-count", type=int, default=10)
    fit.add_argument("--learning-rate", type=float, default=0.01)
    fit.add_argument("--regularization", type=float, default=0.05)
    fit.add_argument("--epochs", type=int, default=30)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--user", help="user id to extract (default: most ratings)")
    fit.set_defaults(func=cmd_fit_mf)

    summarize = sub.add_parser("summarize", help="rebuild summary from traces")
    summarize.add_argument("--traces", type=Path, required=True)
    summarize.add_argument("--out", type=Path, required=True)
    summarize.set_defaults(func=cmd_summarize)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
