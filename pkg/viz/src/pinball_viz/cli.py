"""plot_pinball: render simulation CSV outputs into figures."""

from __future__ import annotations

import argparse
import sys

from .plots import KINDS, PlotJob, render
from .readers import FormatError, NoDataError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot_pinball",
        description="render pinball simulation CSV outputs (pure reader)")
    parser.add_argument("inputs", nargs="+",
                        help="CSV tables, plus optional .bpwf field snapshots")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--out", required=True, help="output image (.png or .svg)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = PlotJob(tuple(args.inputs), args.kind, args.out)
        render(job)
    except (NoDataError, FormatError, ValueError, OSError) as exc:
        print(f"plot_pinball: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
