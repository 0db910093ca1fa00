"""Render cumulative-regret figures from experiment trace CSVs.

Input files follow the harness trace contract: header
``policy,seed,round,instant_regret,cumulative_regret`` and a filename of
the form ``<policy>__seed-<n>__d-<dim>__noise-<var>.csv`` carrying the
facet metadata. Each figure shows one line per policy (mean cumulative
regret across seeds) with a band across seeds, one figure per facet value.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EXPECTED_HEADER = ("policy", "seed", "round", "instant_regret", "cumulative_regret")

FACET_CHOICES = ("dimension", "noise_variance", "none")
BAND_CHOICES = ("minmax", "std")

_FILENAME_RE = re.compile(
    r"^(?P<policy>.+)__seed-(?P<seed>\d+)"
    r"__d-(?P<dim>\d+)__noise-(?P<noise>[0-9.eE+-]+)\.csv$"
)

_FACET_LABELS = {"dimension": "d", "noise_variance": "noise variance"}

# Constant PNG metadata keeps repeated renders byte-identical.
_PNG_METADATA = {"Software": "herdplot"}


class SchemaError(ValueError):
    """A trace file does not follow the expected CSV contract."""


@dataclass(frozen=True)
class Trace:
    policy: str
    seed: int
    dimension: int
    noise_variance: float
    rounds: np.ndarray
    cumulative: np.ndarray


@dataclass(frozen=True)
class PlotSpec:
    """What to render: which traces, how to facet, where to write."""

    trace_paths: tuple[str, ...]
    out_path: str
    facet: str = "none"
    band: str = "minmax"
    dpi: int = 150

    def __post_init__(self) -> None:
        if not self.trace_paths:
            raise ValueError("at least one input trace is required")
        if self.facet not in FACET_CHOICES:
            raise ValueError(f"facet must be one of {FACET_CHOICES}")
        if self.band not in BAND_CHOICES:
            raise ValueError(f"band must be one of {BAND_CHOICES}")


def load_trace(path: str | Path) -> Trace:
    """Parse one trace CSV, validating the schema column by column."""
    path = Path(path)
    meta = _FILENAME_RE.match(path.name)
    if meta is None:
        raise SchemaError(
            f"{path.name}: filename does not follow "
            "<policy>__seed-<n>__d-<dim>__noise-<var>.csv"
        )
    lines = path.read_text(encoding="utf-8").strip().split("\n")
    header = tuple(lines[0].split(","))
    if header != EXPECTED_HEADER:
        for got, expected in zip(header, EXPECTED_HEADER):
            if got != expected:
                raise SchemaError(
                    f"{path.name}: expected column {expected!r}, found {got!r}"
                )
        raise SchemaError(
            f"{path.name}: expected {len(EXPECTED_HEADER)} columns, "
            f"found {len(header)}"
        )
    rounds = np.empty(len(lines) - 1)
    cumulative = np.empty(len(lines) - 1)
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != len(EXPECTED_HEADER):
            raise SchemaError(f"{path.name}: row {i + 2} has {len(cells)} cells")
        rounds[i] = float(cells[2])
        cumulative[i] = float(cells[4])
    return Trace(
        policy=meta.group("policy"),
        seed=int(meta.group("seed")),
        dimension=int(meta.group("dim")),
        noise_variance=float(meta.group("noise")),
        rounds=rounds,
        cumulative=cumulative,
    )


def _facet_value(trace: Trace, facet: str):
    if facet == "dimension":
        return trace.dimension
    if facet == "noise_variance":
        return trace.noise_variance
    return None


def _out_path_for_facet(out_path: str, facet: str, value) -> Path:
    out = Path(out_path)
    if facet == "none":
        return out
    token = f"d-{value}" if facet == "dimension" else f"noise-{value:g}"
    return out.with_name(f"{out.stem}_{token}{out.suffix or '.png'}")


def build_figure(traces: list[Trace], spec: PlotSpec, title: str = ""):
    """One cumulative-regret panel: a mean line per policy plus a seed band.

    Returned open so tests can inspect lines, bands, and legend entries;
    callers own closing it.
    """
    by_policy: dict[str, list[Trace]] = {}
    for trace in traces:
        by_policy.setdefault(trace.policy, []).append(trace)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for policy in sorted(by_policy):
        group = sorted(by_policy[policy], key=lambda t: t.seed)
        lengths = {t.cumulative.size for t in group}
        if len(lengths) != 1:
            raise SchemaError(
                f"policy {policy!r}: traces disagree on horizon {sorted(lengths)}"
            )
        stack = np.stack([t.cumulative for t in group])
        rounds = group[0].rounds
        mean = stack.mean(axis=0)
        (line,) = ax.plot(rounds, mean, label=policy, linewidth=1.6)
        if stack.shape[0] > 1:
            if spec.band == "minmax":
                low, high = stack.min(axis=0), stack.max(axis=0)
            else:
                sd = stack.std(axis=0, ddof=0)
                low, high = mean - sd, mean + sd
            ax.fill_between(rounds, low, high, color=line.get_color(), alpha=0.2,
                            linewidth=0)
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative regret")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", frameon=False)
    ax.margins(x=0)
    fig.tight_layout()
    return fig


def render(spec: PlotSpec) -> list[Path]:
    """Render one figure per facet value; returns the written paths."""
    traces = [load_trace(p) for p in spec.trace_paths]
    groups: dict[object, list[Trace]] = {}
    for trace in traces:
        groups.setdefault(_facet_value(trace, spec.facet), []).append(trace)

    written = []
    for value in sorted(groups, key=lambda v: (v is None, v)):
        path = _out_path_for_facet(spec.out_path, spec.facet, value)
        title = "" if value is None else f"{_FACET_LABELS[spec.facet]} = {value:g}"
        fig = build_figure(groups[value], spec, title)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=spec.dpi, metadata=_PNG_METADATA)
        plt.close(fig)
        written.append(path)
    return written
