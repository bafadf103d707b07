"""Command-line front end: run scenarios, calibrate, verify golden data.

Exit codes: 0 all checks passed, 2 config/usage error, 3 a numerical
assertion failed, 4 runtime abort mid-scenario.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, parse_config, serialize_config
from .scenarios import NumericalCheckError, OutputExistsError, run_scenario, verify_golden

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_RUNTIME = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pinball",
        description="wavepacket pinball: scattering, guidance trajectories, detector collapse")
    parser.add_argument("--version", action="version", version=f"pinball {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run any scenario config")
    run.add_argument("config", help="scenario config file")
    run.add_argument("--out", help="output directory (default <config stem>_out)")
    run.add_argument("--overwrite", action="store_true",
                     help="replace existing outputs")

    cal = sub.add_parser("calibrate", help="run a calibrate-kind config")
    cal.add_argument("config")
    cal.add_argument("--out")
    cal.add_argument("--overwrite", action="store_true")

    ver = sub.add_parser("verify", help="compare run outputs against golden data")
    ver.add_argument("out_dir")
    ver.add_argument("golden_dir")
    return parser


def _load_config(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        print(f"pinball: cannot read config: {exc}", file=sys.stderr)
        return None
    try:
        return parse_config(text)
    except ConfigError as exc:
        print("pinball: invalid config:", file=sys.stderr)
        for err in exc.errors:
            print(f"  - {err}", file=sys.stderr)
        return None


def _run(args, require_kind: str | None = None) -> int:
    cfg = _load_config(args.config)
    if cfg is None:
        return EXIT_CONFIG
    if require_kind and cfg.kind != require_kind:
        print(f"pinball: expected a {require_kind} config, got {cfg.kind}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or f"{Path(args.config).stem}_out"
    print(f"pinball {cfg.kind}: writing to {out}")
    print(serialize_config(cfg), end="")
    try:
        manifest = run_scenario(cfg, out, overwrite=args.overwrite)
    except OutputExistsError as exc:
        print(f"pinball: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalCheckError as exc:
        print(f"pinball: numerical check failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"pinball: runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for key in sorted(manifest.metrics):
        print(f"  {key} = {manifest.metrics[key]}")
    print(f"done in {manifest.wall_time_s:.1f} s ({len(manifest.outputs)} outputs)")
    return EXIT_OK


def _verify(args) -> int:
    try:
        report = verify_golden(args.out_dir, args.golden_dir)
    except FileNotFoundError as exc:
        print(f"pinball: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _run(args)
    if args.command == "calibrate":
        return _run(args, require_kind="calibrate")
    if args.command == "verify":
        return _verify(args)
    return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
