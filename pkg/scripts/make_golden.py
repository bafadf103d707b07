#!/usr/bin/env python3
"""Regenerate the committed golden data from the shipped configs.

Golden CSVs are bitwise-deterministic on one platform; the tolerances file
gives cross-platform slack on FFT-roundoff-sensitive columns.
"""

import shutil
import sys
from pathlib import Path

from pinball.cli import main as pinball_main

ROOT = Path(__file__).resolve().parent.parent

CAL_TOLERANCES = "calibration.csv:transmission:1e-6\n"
MEASURED_TOLERANCES = """\
trajectories.csv:x:5e-4
trajectories.csv:t:1e-9
records.csv:q0:1e-6
"""


def _copy_outputs(scratch: Path, golden: Path, names) -> None:
    golden.mkdir(parents=True, exist_ok=True)
    for name in names:
        for path in sorted(scratch.glob(name)):
            shutil.copy(path, golden / path.name)


def make() -> int:
    scratch = ROOT / "runs" / "_golden_scratch"
    code = pinball_main(["run", str(ROOT / "configs" / "calibrate.cfg"),
                         "--out", str(scratch), "--overwrite"])
    if code:
        return code
    golden = ROOT / "golden" / "calibrate"
    _copy_outputs(scratch, golden, ["calibration.csv"])
    (golden / "tolerances.cfg").write_text(CAL_TOLERANCES)
    print(f"golden data written to {golden}")

    scratch = ROOT / "runs" / "_golden_measured"
    code = pinball_main(["run", str(ROOT / "configs" / "pinball_measured.cfg"),
                         "--out", str(scratch), "--overwrite"])
    if code:
        return code
    golden = ROOT / "golden" / "measured"
    _copy_outputs(scratch, golden,
                  ["trajectories.csv", "records.csv", "events.csv", "divergence_*.csv"])
    (golden / "tolerances.cfg").write_text(MEASURED_TOLERANCES)
    print(f"golden data written to {golden}")
    return 0


if __name__ == "__main__":
    sys.exit(make())
