#!/usr/bin/env python3
"""Run every shipped config through the CLI into runs/<name>.

The unitary lattice run takes a few minutes; pass --quick to skip it.
"""

import argparse
import sys
from pathlib import Path

from pinball.cli import main as pinball_main

ROOT = Path(__file__).resolve().parent.parent


def run(quick: bool) -> int:
    worst = 0
    for cfg in sorted((ROOT / "configs").glob("*.cfg")):
        if quick and cfg.stem == "pinball_unitary":
            print(f"-- skipping {cfg.name} (--quick)")
            continue
        out = ROOT / "runs" / cfg.stem
        print(f"== {cfg.name} -> {out}")
        code = pinball_main(["run", str(cfg), "--out", str(out), "--overwrite"])
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="skip the 2D lattice run")
    sys.exit(run(ap.parse_args().quick))
