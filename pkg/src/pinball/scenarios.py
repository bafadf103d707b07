"""Run scenarios end to end: simulate, write outputs, verify golden data.

Every scenario writes its CSV outputs first and a manifest.json last, so the
manifest's presence signals completion; numeric per-scenario checks raise
NumericalCheckError (CLI exit 3) after a failed manifest is recorded.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bohm import (
    cdf_from_line,
    integrate_trajectories,
    ks_statistic,
    mass_ahead,
    quantile_position,
    sample_ensemble,
    write_events_csv,
    write_trajectories_csv,
)
from .chaos import DivergenceReport, QuantileSequence, compare_to_oracle, write_divergence_csv
from .config import ScenarioConfig, config_digest, with_defaults_for
from .geometry import Barrier, PinballGeometry, calibrate_half_transmission, bump_potential
from .measurement import run_measured_pinball, run_unitary_pinball
from .wavefield import Grid, PacketSpec, Wavefunction, gaussian_packet, marginal_1d, save_snapshot

KS_COEFF_1PCT = 1.63  # critical KS distance at 1% significance is 1.63/sqrt(n)


class NumericalCheckError(RuntimeError):
    """A scenario-level numeric assertion failed (CLI exit 3)."""


class OutputExistsError(RuntimeError):
    """Output directory already holds results and --overwrite was not given."""


@dataclass
class RunManifest:
    config_sha256: str
    version: str
    status: str
    wall_time_s: float
    outputs: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def write(self, path) -> None:
        payload = {
            "config_sha256": self.config_sha256,
            "version": self.version,
            "status": self.status,
            "wall_time_s": self.wall_time_s,
            "outputs": self.outputs,
            "metrics": self.metrics,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "RunManifest":
        raw = json.loads(Path(path).read_text())
        return RunManifest(raw["config_sha256"], raw["version"], raw["status"],
                           raw["wall_time_s"], raw["outputs"], raw["metrics"])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _scalar(values) -> float:
    return float(np.atleast_1d(values)[0])


def _axis_packet(cfg: ScenarioConfig) -> PacketSpec:
    return PacketSpec(_scalar(cfg.packet_center), _scalar(cfg.packet_momentum),
                      _scalar(cfg.packet_sigma))


def _resolve_barrier(cfg: ScenarioConfig, metrics: dict) -> Barrier:
    """Explicit height, or a calibration run on the canonical 1D bench."""
    if cfg.barrier_height is not None:
        return Barrier(0.0, cfg.barrier_height, cfg.barrier_width)
    grid = Grid((1024,), (64.0,))
    packet = PacketSpec(-8.0, _scalar(cfg.packet_momentum), _scalar(cfg.packet_sigma))
    cal = calibrate_half_transmission(cfg.barrier_width, packet, grid,
                                      tol=cfg.calibrate_tol, dt=cfg.run_dt,
                                      target=cfg.calibrate_target)
    metrics["calibrated_height"] = cal.height
    metrics["calibrated_transmission"] = cal.transmission
    return cal.barrier


def _geometry(cfg: ScenarioConfig, barrier: Barrier) -> PinballGeometry:
    return PinballGeometry(levels=cfg.geometry_levels, pitch=cfg.geometry_pitch,
                           row_spacing=cfg.geometry_row_spacing, barrier=barrier,
                           apex=tuple(cfg.geometry_apex),
                           window_half=cfg.geometry_window_half,
                           window_edge=cfg.geometry_window_edge)


# --- scenario bodies ---------------------------------------------------------


def _run_calibrate(cfg: ScenarioConfig, out: Path, metrics: dict) -> list[Path]:
    grid = Grid(cfg.grid_n, cfg.grid_length)
    cal = calibrate_half_transmission(cfg.barrier_width, _axis_packet(cfg), grid,
                                      tol=cfg.calibrate_tol, dt=cfg.run_dt,
                                      target=cfg.calibrate_target)
    path = out / "calibration.csv"
    with open(path, "w", newline="\n") as fh:
        fh.write("height,transmission\n")
        for h, t in cal.samples:
            fh.write(f"{h!r},{t!r}\n")
        fh.write(f"# h_star={cal.height!r} transmission={cal.transmission!r} "
                 f"target={cal.target!r} width={cal.width!r}\n")
    metrics.update(h_star=cal.height, transmission=cal.transmission,
                   target=cal.target, probes=len(cal.samples))
    if abs(cal.transmission - cfg.calibrate_target) > cfg.calibrate_tol:
        raise NumericalCheckError("calibration missed its transmission tolerance")
    return [path]


def _run_single_barrier(cfg: ScenarioConfig, out: Path, metrics: dict) -> list[Path]:
    grid = Grid(cfg.grid_n, cfg.grid_length)
    packet = _axis_packet(cfg)
    barrier = _resolve_barrier(cfg, metrics)
    psi0 = gaussian_packet(grid, packet)
    starts = sample_ensemble(psi0, cfg.particles_count, cfg.particles_seed)
    k0 = _scalar(cfg.packet_momentum)
    sigma = _scalar(cfg.packet_sigma)
    n_steps = int((abs(_scalar(cfg.packet_center)) + 14 * sigma) / (k0 * cfg.run_dt))
    n_steps += -n_steps % cfg.run_sample_every
    run = integrate_trajectories(psi0, bump_potential(barrier, grid), cfg.run_dt,
                                 n_steps, starts, vmax=10 * k0,
                                 sample_every=cfg.run_sample_every, leak_tol=1e-6)

    rho0 = marginal_1d(psi0)
    dx = grid.spacing[0]
    rows = []
    violations = 0
    crossings = 0
    order = np.argsort(run.history[0][:, 0])
    for snap in run.history[1:]:
        if np.any(np.diff(snap[order, 0]) <= -dx):
            crossings += 1
    for i in range(starts.shape[0]):
        q0 = mass_ahead(grid, 0, rho0, starts[i, 0], 1)
        transmitted = int(run.positions[i, 0] > barrier.center)
        rows.append((i, q0, transmitted))
        if q0 < 0.48 and not transmitted:
            violations += 1
        if q0 > 0.52 and transmitted:
            violations += 1
    paths = [out / "trajectories.csv", out / "events.csv", out / "summary.csv"]
    write_trajectories_csv(paths[0], run.trajectories())
    write_events_csv(paths[1], run.trajectories())
    _write_csv(paths[2], "trajectory_id,q0,transmitted", rows)
    norm_drift = abs(run.psi.norm - 1.0)
    metrics.update(particles=int(starts.shape[0]),
                   front_half_violations=violations,
                   ordering_violations=crossings,
                   transmitted_fraction=float(np.mean([r[2] for r in rows])),
                   capped=run.capped, norm_drift=norm_drift)
    if violations or crossings:
        raise NumericalCheckError(
            f"{violations} front-half and {crossings} ordering violations")
    if run.capped:
        raise NumericalCheckError(f"{run.capped} velocity evaluations were capped")
    if norm_drift > 1e-10:
        raise NumericalCheckError(f"norm drift {norm_drift:.2e} above 1e-10")
    return paths


def _run_pinball_measured(cfg: ScenarioConfig, out: Path, metrics: dict) -> list[Path]:
    grid = Grid(cfg.grid_n, cfg.grid_length)
    packet = _axis_packet(cfg)
    barrier = _resolve_barrier(cfg, metrics)
    geom = _geometry(cfg, barrier)

    seeds = list(cfg.particles_q0)
    if cfg.particles_count > 0:
        rng = np.random.default_rng(cfg.particles_seed)
        seeds.extend(float(q) for q in rng.uniform(0.02, 0.98, cfg.particles_count))
    delta = cfg.particles_pair_delta

    runs = []
    labels = []
    for i, q0 in enumerate(seeds):
        runs.append(run_measured_pinball(geom, packet, q0, cfg.run_levels, grid=grid,
                                         dt=cfg.run_dt, eps_sep=cfg.run_eps_sep,
                                         sample_every=cfg.run_sample_every))
        labels.append((i, "a"))
        if delta is not None:
            partner = q0 + delta if q0 + delta < 1.0 else q0 - delta
            runs.append(run_measured_pinball(geom, packet, partner, cfg.run_levels,
                                             grid=grid, dt=cfg.run_dt,
                                             eps_sep=cfg.run_eps_sep,
                                             sample_every=cfg.run_sample_every))
            labels.append((i, "b"))

    trajectories = []
    record_rows = []
    early_dev = 0.0
    capped = 0
    for run_id, (run, (pair_id, side)) in enumerate(zip(runs, labels)):
        run.trajectory.particle_id = run_id
        trajectories.append(run.trajectory)
        record_rows.append((run_id, run.q0, str(run.record), run.nodes[-1],
                            *run.q_values))
        capped += run.capped
        cmp = compare_to_oracle(QuantileSequence(tuple(run.q_values[:4])), run.q0)
        early_dev = max(early_dev, cmp.max_abs_deviation)

    q_headers = ",".join(f"q_{i}" for i in range(cfg.run_levels))
    paths = [out / "records.csv", out / "trajectories.csv", out / "events.csv"]
    _write_csv(paths[0], f"run_id,q0,bits,final_node,{q_headers}", record_rows)
    write_trajectories_csv(paths[1], trajectories)
    write_events_csv(paths[2], trajectories)

    mismatches = []
    rates = []
    if delta is not None:
        for p in range(len(seeds)):
            a, b = runs[2 * p], runs[2 * p + 1]
            rep = DivergenceReport(tuple(a.q_values), tuple(b.q_values),
                                   tuple(a.nodes), tuple(b.nodes))
            path = out / f"divergence_{p:03d}.csv"
            write_divergence_csv(path, rep)
            paths.append(path)
            # bit ordinals: the first scattering is level 1
            mismatches.append(rep.first_split + 1 if rep.first_split is not None
                              else cfg.run_levels + 2)
            try:
                rates.append(rep.expansion_rate())
            except ValueError:
                pass
        metrics["first_mismatch_median"] = float(np.median(mismatches))
        if rates:
            metrics["lyapunov_median"] = float(np.median(rates))
    metrics.update(runs=len(runs), levels=cfg.run_levels, capped=capped,
                   early_oracle_deviation=early_dev)
    if capped:
        raise NumericalCheckError(f"{capped} velocity evaluations were capped")
    if early_dev > 0.02:
        raise NumericalCheckError(
            f"simulated quantiles deviate {early_dev:.4f} from the map over the first 4 levels")
    return paths


def _run_pinball_unitary(cfg: ScenarioConfig, out: Path, metrics: dict) -> list[Path]:
    cfg = with_defaults_for(cfg)
    grid = Grid(cfg.grid_n, cfg.grid_length)
    packet = PacketSpec(cfg.packet_center, cfg.packet_momentum, cfg.packet_sigma)
    barrier = _resolve_barrier(cfg, metrics)
    geom = _geometry(cfg, barrier)
    psi0 = gaussian_packet(grid, packet)
    rho0 = marginal_1d(psi0, 0)
    sigma = cfg.packet_sigma[0]
    y0 = cfg.packet_center[1]

    positions = []
    n_pairs = len(cfg.particles_q0)
    delta = (cfg.particles_pair_delta if cfg.particles_pair_delta is not None else 0.01)
    for q in cfg.particles_q0:
        x_q = quantile_position(grid, 0, rho0, q, direction=1)
        positions.append((x_q, y0))
        positions.append((x_q + delta * sigma, y0))
    if cfg.particles_count > 0:
        ens = sample_ensemble(psi0, cfg.particles_count, cfg.particles_seed)
        positions.extend(map(tuple, ens))
    if not positions:
        raise NumericalCheckError("unitary run has no particles (set q0 list or count)")

    run = run_unitary_pinball(geom, packet, np.asarray(positions), cfg.run_duration,
                              grid=grid, dt=cfg.run_dt,
                              sample_every=cfg.run_sample_every)

    paths = [out / "trajectories.csv", out / "potential.bpwf", out / "final_state.bpwf"]
    write_trajectories_csv(paths[0], run.trajectories())
    from .geometry import build_potential
    save_snapshot(Wavefunction(grid, build_potential(geom, grid).astype(complex)), paths[1])
    save_snapshot(run.psi, paths[2])

    pair_rows = []
    max_ratio = 0.0
    max_q_ratio = 0.0
    rho_f = marginal_1d(run.psi, 0)
    for p in range(n_pairs):
        a0 = np.asarray(positions[2 * p])
        b0 = np.asarray(positions[2 * p + 1])
        a1 = run.positions[2 * p]
        b1 = run.positions[2 * p + 1]
        d0 = float(np.linalg.norm(a0 - b0))
        d1 = float(np.linalg.norm(a1 - b1))
        dq0 = abs(mass_ahead(grid, 0, rho0, a0[0], 1) - mass_ahead(grid, 0, rho0, b0[0], 1))
        dq1 = abs(mass_ahead(grid, 0, rho_f, a1[0], 1) - mass_ahead(grid, 0, rho_f, b1[0], 1))
        q_ratio = dq1 / dq0 if dq0 > 0 else 0.0
        max_ratio = max(max_ratio, d1 / d0)
        max_q_ratio = max(max_q_ratio, q_ratio)
        pair_rows.append((p, cfg.particles_q0[p], d0, d1, d1 / d0, dq0, dq1, q_ratio))
    if pair_rows:
        path = out / "pair_separations.csv"
        _write_csv(path, "pair_id,q0,initial_separation,final_separation,ratio,"
                         "initial_dq,final_dq,q_ratio", pair_rows)
        paths.append(path)
        metrics["max_separation_ratio"] = max_ratio
        metrics["max_quantile_separation_ratio"] = max_q_ratio

    if cfg.particles_count >= 100:
        lateral = marginal_1d(run.psi, 0)
        cdf = cdf_from_line(grid, 0, lateral)
        ens_final = run.positions[2 * n_pairs:, 0]
        d_stat = ks_statistic(ens_final, cdf)
        crit = KS_COEFF_1PCT / math.sqrt(len(ens_final))
        metrics.update(ks_distance=d_stat, ks_critical=crit)
        if d_stat >= crit:
            raise NumericalCheckError(
                f"lateral ensemble failed the KS check: {d_stat:.4f} >= {crit:.4f}")

    metrics.update(particles=len(positions), capped=run.capped,
                   norm_drift=abs(run.psi.norm - 1.0))
    if run.capped:
        raise NumericalCheckError(f"{run.capped} velocity evaluations were capped")
    if pair_rows and max_q_ratio >= 10.0:
        raise NumericalCheckError(
            f"pair internal-coordinate separation ratio {max_q_ratio:.2f} >= 10")
    return paths


def _run_ensemble_stats(cfg: ScenarioConfig, out: Path, metrics: dict) -> list[Path]:
    grid = Grid(cfg.grid_n, cfg.grid_length)
    packet = _axis_packet(cfg)
    psi0 = gaussian_packet(grid, packet)
    starts = sample_ensemble(psi0, cfg.particles_count, cfg.particles_seed)
    height = cfg.barrier_height if cfg.barrier_height is not None else 0.0
    potential = (bump_potential(Barrier(0.0, height, cfg.barrier_width), grid)
                 if height > 0 else 0.0)
    n_steps = int(round(cfg.run_duration / cfg.run_dt))
    n_steps += -n_steps % cfg.run_sample_every
    run = integrate_trajectories(psi0, potential, cfg.run_dt, n_steps, starts,
                                 vmax=10 * _scalar(cfg.packet_momentum),
                                 sample_every=n_steps, leak_tol=1e-6)
    cdf = cdf_from_line(grid, 0, marginal_1d(run.psi))
    d_stat = ks_statistic(run.positions[:, 0], cdf)
    crit = KS_COEFF_1PCT / math.sqrt(starts.shape[0])
    rows = [(i, starts[i, 0], run.positions[i, 0]) for i in range(starts.shape[0])]
    path = out / "ensemble.csv"
    _write_csv(path, "particle_id,x_initial,x_final", rows)
    metrics.update(particles=int(starts.shape[0]), ks_distance=d_stat,
                   ks_critical=crit, capped=run.capped)
    if d_stat >= crit:
        raise NumericalCheckError(f"KS distance {d_stat:.4f} >= critical {crit:.4f}")
    return [path]


_RUNNERS = {
    "calibrate": _run_calibrate,
    "single_barrier": _run_single_barrier,
    "pinball_measured": _run_pinball_measured,
    "pinball_unitary": _run_pinball_unitary,
    "ensemble_stats": _run_ensemble_stats,
}


def run_scenario(cfg: ScenarioConfig, out_dir, overwrite: bool = False) -> RunManifest:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise OutputExistsError(f"{out} already holds outputs; pass --overwrite to replace")
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)
    metrics: dict = {}
    t0 = time.perf_counter()
    try:
        paths = _RUNNERS[cfg.kind](cfg, out, metrics)
    except Exception:
        failed = RunManifest(digest, __version__, "failed",
                             time.perf_counter() - t0, [], metrics)
        failed.write(out / "manifest.json")
        raise
    outputs = [{"name": p.name, "sha256": _sha256(p)} for p in paths]
    manifest = RunManifest(digest, __version__, "ok", time.perf_counter() - t0,
                           outputs, metrics)
    manifest.write(out / "manifest.json")
    return manifest


# --- golden comparison --------------------------------------------------------


@dataclass(frozen=True)
class GoldenDiff:
    file: str
    row: int
    column: str
    got: str
    want: str
    tolerance: float


@dataclass
class GoldenReport:
    diffs: list = field(default_factory=list)
    missing: list = field(default_factory=list)
    compared: int = 0

    @property
    def passed(self) -> bool:
        return not self.diffs and not self.missing

    def summary(self) -> str:
        if self.passed:
            return f"golden check passed ({self.compared} files)"
        lines = [f"golden check FAILED ({len(self.diffs)} diffs, {len(self.missing)} missing)"]
        lines += [f"  missing: {m}" for m in self.missing]
        lines += [f"  {d.file}:{d.row}:{d.column}: got {d.got} want {d.want} "
                  f"(tol {d.tolerance})" for d in self.diffs[:40]]
        return "\n".join(lines)


def _load_tolerances(golden: Path) -> dict[tuple[str, str], float]:
    table: dict[tuple[str, str], float] = {}
    tol_file = golden / "tolerances.cfg"
    if tol_file.exists():
        for raw in tol_file.read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            name, column, tol = line.split(":")
            table[(name.strip(), column.strip())] = float(tol)
    return table


def _read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    rows = []
    header: list[str] = []
    for raw in path.read_text().splitlines():
        if not raw or raw.startswith("#"):
            continue
        cells = raw.split(",")
        if not header:
            header = cells
        else:
            rows.append(cells)
    return header, rows


def verify_golden(out_dir, golden_dir) -> GoldenReport:
    """Compare every golden CSV against the run output, cell by cell."""
    out = Path(out_dir)
    golden = Path(golden_dir)
    if not out.is_dir() or not golden.is_dir():
        raise FileNotFoundError("both output and golden directories must exist")
    tolerances = _load_tolerances(golden)
    report = GoldenReport()
    for gfile in sorted(golden.glob("*.csv")):
        ofile = out / gfile.name
        if not ofile.exists():
            report.missing.append(gfile.name)
            continue
        report.compared += 1
        g_head, g_rows = _read_csv_rows(gfile)
        o_head, o_rows = _read_csv_rows(ofile)
        if g_head != o_head:
            report.diffs.append(GoldenDiff(gfile.name, 0, "<header>",
                                           ",".join(o_head), ",".join(g_head), 0.0))
            continue
        if len(g_rows) != len(o_rows):
            report.diffs.append(GoldenDiff(gfile.name, 0, "<rows>",
                                           str(len(o_rows)), str(len(g_rows)), 0.0))
            continue
        for r, (g_row, o_row) in enumerate(zip(g_rows, o_rows), start=1):
            for c, col in enumerate(g_head):
                want = g_row[c] if c < len(g_row) else ""
                got = o_row[c] if c < len(o_row) else ""
                tol = tolerances.get((gfile.name, col), 0.0)
                if want == got:
                    continue
                try:
                    if abs(float(want) - float(got)) <= tol:
                        continue
                except ValueError:
                    pass
                report.diffs.append(GoldenDiff(gfile.name, r, col, got, want, tol))
    return report
