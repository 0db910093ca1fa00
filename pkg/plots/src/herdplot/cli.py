"""Command line for the trace renderer.

Usage: ``herdplot render --traces '<glob>' --facet dimension|noise_variance|none
--out figures/regret.png --band minmax|std``. Exit code 0 on success,
1 on schema problems or rendering failures, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import glob
import sys

from .render import BAND_CHOICES, FACET_CHOICES, PlotSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="herdplot", description="Render regret-trace CSVs into figures"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    cmd = sub.add_parser("render", help="render one figure per facet value")
    cmd.add_argument("--traces", required=True,
                     help="glob matching trace CSV files")
    cmd.add_argument("--facet", choices=FACET_CHOICES, default="none")
    cmd.add_argument("--out", required=True, help="output image path")
    cmd.add_argument("--band", choices=BAND_CHOICES, default="minmax")
    cmd.add_argument("--dpi", type=int, default=150)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    paths = sorted(glob.glob(args.traces))
    if not paths:
        print(f"error: no trace files match {args.traces!r}", file=sys.stderr)
        return 2
    try:
        spec = PlotSpec(trace_paths=tuple(paths), out_path=args.out,
                        facet=args.facet, band=args.band, dpi=args.dpi)
        written = render(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
