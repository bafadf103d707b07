"""Figure renderers: trajectories over the lattice, quantile staircases,
and pair divergence on a log scale."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "pinball-viz"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .readers import NoDataError, read_divergence, read_field, read_records, read_trajectories

KINDS = ("trajectories_2d", "quantile_sequence", "divergence")
LN2 = math.log(2.0)


@dataclass(frozen=True)
class PlotJob:
    inputs: tuple[str, ...]
    kind: str
    out: str
    dpi: int = 150
    figsize: tuple[float, float] = (7.0, 5.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not self.inputs:
            raise ValueError("need at least one input file")
        out_dir = Path(self.out).resolve().parent
        for item in self.inputs:
            if Path(item).resolve().parent == out_dir:
                raise ValueError(
                    f"refusing to write into the simulation output directory {out_dir}")


def _save(fig, job: PlotJob) -> None:
    out = Path(job.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if out.suffix == ".svg" else {"Software": "plot_pinball"}
    fig.savefig(out, dpi=job.dpi, metadata=meta)
    plt.close(fig)


def _split_inputs(job: PlotJob):
    fields = [p for p in job.inputs if p.endswith(".bpwf")]
    tables = [p for p in job.inputs if not p.endswith(".bpwf")]
    labels = {}
    rest = []
    for path in tables:
        name = Path(path).name
        if name in ("records.csv", "summary.csv"):
            try:
                for rec in read_records(path):
                    labels[rec["run_id"]] = rec["q0"]
            except Exception:
                header = Path(path).read_text().splitlines()[0].split(",")
                if header[:2] == ["trajectory_id", "q0"]:
                    for line in Path(path).read_text().splitlines()[1:]:
                        cells = line.split(",")
                        labels[int(cells[0])] = float(cells[1])
        else:
            rest.append(path)
    return rest, fields, labels


def plot_trajectories(job: PlotJob) -> None:
    """Trajectory curves, over potential contours when a field is supplied."""
    tables, fields, labels = _split_inputs(job)
    if not tables:
        raise NoDataError("no trajectory table among the inputs")
    fig, ax = plt.subplots(figsize=job.figsize)
    for path in fields:
        axes, data, _ = read_field(path)
        if len(axes) == 2:
            ax.contour(axes[0], axes[1], data.real.T, levels=8,
                       colors="gray", linewidths=0.6, alpha=0.7)
    planar = False
    for path in tables:
        for tid, tr in sorted(read_trajectories(path).items()):
            label = f"q0 = {labels[tid]:.4g}" if tid in labels else f"trajectory {tid}"
            if tr["y"] is not None:
                planar = True
                ax.plot(tr["x"], tr["y"], lw=1.2, label=label)
            else:
                ax.plot(tr["t"], tr["x"], lw=1.2, label=label)
    if planar:
        ax.set_xlabel("scattering axis")
        ax.set_ylabel("drift axis")
    else:
        ax.set_xlabel("time")
        ax.set_ylabel("perpendicular coordinate")
    ax.set_title("pinball trajectories")
    if len(ax.get_lines()) <= 12:
        ax.legend(fontsize=8, loc="best")
    ax.grid(alpha=0.25)
    _save(fig, job)


def plot_quantile_sequence(job: PlotJob) -> None:
    """Per-run internal coordinate against scattering level."""
    records = []
    for path in job.inputs:
        records.extend(read_records(path))
    fig, ax = plt.subplots(figsize=job.figsize)
    for rec in records:
        levels = range(len(rec["q"]))
        ax.step(levels, rec["q"], where="mid", lw=1.2,
                label=f"q0 = {rec['q0']:.4g}")
    ax.axhline(0.5, color="gray", ls="--", lw=0.8)
    ax.set_xlabel("scattering level")
    ax.set_ylabel("internal coordinate q")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("internal coordinate under repeated detection")
    if len(records) <= 12:
        ax.legend(fontsize=8, loc="best")
    ax.grid(alpha=0.25)
    _save(fig, job)


def plot_divergence(job: PlotJob) -> None:
    """log|dq| against level with a doubling-rate reference line."""
    fig, ax = plt.subplots(figsize=job.figsize)
    drew_reference = False
    for path in job.inputs:
        table = read_divergence(path)
        level = table["level"]
        dq = table["dq"]
        live = dq > 0
        ax.semilogy(level[live], dq[live], "o-", ms=4, lw=1.0,
                    label=Path(path).stem)
        if not drew_reference and live.any():
            l0 = level[live][0]
            d0 = dq[live][0]
            ref_levels = level
            ax.semilogy(ref_levels, d0 * np.exp(LN2 * (ref_levels - l0)),
                        "k--", lw=1.0, label="doubling rate ln 2")
            drew_reference = True
    ax.set_xlabel("scattering level")
    ax.set_ylabel("|dq| between pair members")
    ax.set_title("pair separation in the internal coordinate")
    ax.legend(fontsize=8, loc="best")
    ax.grid(alpha=0.25, which="both")
    _save(fig, job)


RENDERERS = {
    "trajectories_2d": plot_trajectories,
    "quantile_sequence": plot_quantile_sequence,
    "divergence": plot_divergence,
}


def render(job: PlotJob) -> None:
    RENDERERS[job.kind](job)
