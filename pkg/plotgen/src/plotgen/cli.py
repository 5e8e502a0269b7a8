"""Command line entry point.

    plotgen --kind layers --in results.csv --out fig.png [--dump-series s.csv]

Exit codes: 0 on success, 1 on usage errors, 2 when the input CSV does
not back the requested figure (missing column, no matching rows, bad
values).
"""

from __future__ import annotations

import argparse
import sys

from . import KINDS, PlotDataError, PlotSpec, render


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser():
    parser = _Parser(prog="plotgen", description=__doc__.splitlines()[0])
    parser.add_argument("--kind", required=True, choices=sorted(KINDS))
    parser.add_argument("--in", dest="input", required=True, metavar="CSV")
    parser.add_argument("--out", dest="output", required=True, metavar="IMAGE")
    parser.add_argument("--title", default=None)
    parser.add_argument(
        "--eval-mode",
        default="shannon",
        choices=("shannon", "surrogate"),
        help="row filter for layer and error figures (default: shannon)",
    )
    parser.add_argument(
        "--dump-series",
        default=None,
        metavar="CSV",
        help="also write the plotted series to this CSV",
    )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    spec = PlotSpec(
        input=args.input,
        kind=args.kind,
        output=args.output,
        title=args.title,
        eval_mode=args.eval_mode,
        dump_series=args.dump_series,
    )
    try:
        render(spec)
    except FileNotFoundError as exc:
        print(f"plotgen: error: {exc}", file=sys.stderr)
        return 2
    except PlotDataError as exc:
        print(f"plotgen: error: {exc}", file=sys.stderr)
        return 2
    return 0


def entry():
    raise SystemExit(main())
