"""Detector records, effective-wavefunction collapse, and the pinball runs.

Detectors are modeled as orthogonal pointer records attached to branches: a
completed scattering writes one bit (1 = the particle's packet emerged on
the +x side, 0 = the -x side), the wavefunction is masked to the occupied
region and renormalized, and the discarded branch never participates again.

The measured pinball iterates 1D scatterings with frame re-centering: after
each collapse the surviving lobe is flipped (if it reversed) and rolled back
to the standard launch position, so every level reuses one calibrated
barrier.  A parity flag maps engine-frame quantities back to the lab frame;
recorded quantiles are lab-frame (fixed orientation), which is what makes
the level-to-level quantile map the exact doubling map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .bohm import (
    ScatterEvent,
    Trajectory,
    VelocityField,
    TrajectoryRun,
    boundary_mass,
    integrate_trajectories,
    internal_coordinate,
    mass_ahead,
    quantile_position,
    rk4_positions,
)
from .geometry import (
    Barrier,
    PinballGeometry,
    Region,
    SeparationTimeoutError,
    build_potential,
    bump_potential,
    _lobe_separation,
)
from .wavefield import Grid, PacketSpec, SplitStepper, Wavefunction, gaussian_packet, marginal_1d

log = logging.getLogger(__name__)


class PrematureDetectionError(RuntimeError):
    """Detection attempted before the lobes decohered by separation."""


class ParticleInGapError(RuntimeError):
    """Particle sits in neither detector region."""


@dataclass(frozen=True)
class DetectorRecord:
    """Ordered bits of completed scatterings; immutable once written."""

    bits: tuple[int, ...] = ()

    def extended(self, bit: int) -> "DetectorRecord":
        return DetectorRecord(self.bits + (1 if bit else 0,))

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class Branch:
    """A decohered history: wavefunction, detector record, and its weight."""

    psi: Wavefunction
    record: DetectorRecord = DetectorRecord()
    weight: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0 + 1e-12:
            raise ValueError(f"branch weight {self.weight} outside (0, 1]")
        if abs(self.psi.norm - 1.0) > 1e-10:
            raise ValueError(f"branch wavefunction norm {self.psi.norm} != 1")


def _masked_masses(grid: Grid, data: np.ndarray, mask_r: np.ndarray, mask_t: np.ndarray
                   ) -> tuple[float, float, float]:
    rho = np.abs(data) ** 2
    dv = grid.cell_volume
    mass_r = float(np.sum(rho[mask_r]) * dv)
    mass_t = float(np.sum(rho[mask_t]) * dv)
    residual = float(np.sum(rho) * dv) - mass_r - mass_t
    return mass_r, mass_t, residual


def separation_overlap(psi: Wavefunction, region_r: Region, region_t: Region
                       ) -> tuple[float, float, float]:
    """Masses inside each detector region and the residual outside both."""
    mask_r = region_r.mask(psi.grid)
    mask_t = region_t.mask(psi.grid)
    if np.any(mask_r & mask_t):
        raise ValueError("detector regions overlap")
    return _masked_masses(psi.grid, psi.data, mask_r, mask_t)


def _soft_mask(grid: Grid, region: Region, taper_cells: int) -> np.ndarray:
    """Region indicator with half-cosine shoulders just inside the edges.

    A hard cut would seed broadband ripples that race across the periodic
    domain; the taper keeps the collapse support inside the region while
    staying spectrally quiet.
    """
    w = np.ones(grid.n)
    for d in range(grid.dims):
        x = grid.axis(d)
        taper = max(taper_cells * grid.spacing[d], 1e-300)
        inside = np.minimum(x - region.lo[d], region.hi[d] - x)
        prof = 0.5 - 0.5 * np.cos(np.pi * np.clip(inside / taper, 0.0, 1.0))
        prof[inside <= 0.0] = 0.0
        shape = [1] * grid.dims
        shape[d] = grid.n[d]
        w = w * prof.reshape(shape)
    return w


def detect_and_collapse(branch: Branch, position, region_r: Region, region_t: Region,
                        eps_sep: float = 1e-4) -> tuple[Branch, int]:
    """Collapse to the region holding the particle and extend the record.

    Requires decoherence-by-separation (residual below ``eps_sep``) and the
    particle strictly inside exactly one region.  The other region's mass is
    discarded for good; the survivor is renormalized and the branch weight
    multiplied by the pre-collapse mass of the kept region.  The mask is a
    hard cut: the kept region's interior mass distribution (and with it the
    particle's quantile) is preserved exactly.
    """
    mass_r, mass_t, residual = separation_overlap(branch.psi, region_r, region_t)
    if residual >= eps_sep:
        raise PrematureDetectionError(
            f"residual mass {residual:.3e} >= eps_sep {eps_sep:.1e}: lobes not separated")
    in_r = region_r.contains(position)
    in_t = region_t.contains(position)
    if in_r == in_t:
        raise ParticleInGapError(f"particle at {position} is in neither detector region")
    bit = 1 if in_t else 0
    kept_region = region_t if in_t else region_r
    kept_mass = mass_t if in_t else mass_r
    data = np.where(kept_region.mask(branch.psi.grid), branch.psi.data, 0.0)
    data = data / np.sqrt(np.sum(np.abs(data) ** 2) * branch.psi.grid.cell_volume)
    log.debug("collapse: bit=%d kept=%.6f discarded=%.6f residual=%.3e",
              bit, kept_mass, (mass_r if in_t else mass_t), residual)
    psi = Wavefunction(branch.psi.grid, data, branch.psi.time)
    return Branch(psi, branch.record.extended(bit), branch.weight * kept_mass), bit


@dataclass
class MeasuredRun:
    """One particle's trip through the measured pinball."""

    trajectory: Trajectory
    record: DetectorRecord
    weight: float
    q0: float
    q_values: list          # lab-frame quantile entering each level
    q_after: list           # lab-frame quantile just after each collapse
    nodes: list             # lattice node index per level (count of 1-bits)
    collapse_times: list    # detection instant of each level
    capped: int

    @property
    def bits(self) -> tuple[int, ...]:
        return self.record.bits


def _flip(data: np.ndarray) -> np.ndarray:
    """Exact parity flip x -> -x on the periodic grid."""
    return np.roll(data[::-1], 1)


def _position_mean_1d(grid: Grid, rho: np.ndarray) -> float:
    x = grid.axis(0)
    return float(np.sum(x * rho) / np.sum(rho))


def _lobe_std_1d(grid: Grid, rho: np.ndarray) -> float:
    x = grid.axis(0)
    total = float(np.sum(rho))
    mean = float(np.sum(x * rho) / total)
    return float(np.sqrt(np.sum((x - mean) ** 2 * rho) / total))


def _dechirp(grid: Grid, data: np.ndarray, width_target: float | None = None) -> np.ndarray:
    """Rework the quadratic phase (dispersion chirp) of a single lobe.

    Pure phase multiplication: |psi|^2, particle positions, and quantiles are
    untouched.  A lobe at its target width has its chirp flattened; a wider
    lobe gets the chirp overcorrected toward its time reverse, so it arrives
    at the next barrier contracting back toward the calibrated packet
    dimensions.  Models detectors that re-prepare their pointer optics
    between rows.
    """
    rho = np.abs(data) ** 2
    x = grid.axis(0)
    center = _position_mean_1d(grid, rho)
    support = np.flatnonzero(rho > 1e-4 * rho.max())
    lo, hi = support[0], support[-1] + 1
    xs = x[lo:hi] - center
    phase = np.unwrap(np.angle(data[lo:hi]))
    weights = rho[lo:hi]
    design = np.stack([xs ** 2, xs, np.ones_like(xs)], axis=1)
    wsqrt = np.sqrt(weights)
    coeff, *_ = np.linalg.lstsq(design * wsqrt[:, None], phase * wsqrt, rcond=None)
    gain = 1.0
    if width_target is not None and coeff[0] > 0:
        width = _lobe_std_1d(grid, rho)
        gain = 1.0 + min(max(width / width_target - 1.0, 0.0), 1.0)
    return data * np.exp(-1j * gain * coeff[0] * (x - center) ** 2)


def _recarrier(grid: Grid, data: np.ndarray, k_carrier: float) -> np.ndarray:
    """Shift the lobe's mean momentum back to the calibrated carrier.

    Scattering filters momentum (transmitted lobes exit fast, reflected slow),
    which would walk the next split away from one-half; the re-preparing
    detector restores the carrier.  Phase-only: densities, positions, and
    quantiles are untouched.
    """
    import scipy.fft as sfft
    from .wavefield import fft_workers

    hat = sfft.fft(data, workers=fft_workers())
    w = np.abs(hat) ** 2
    k = grid.wavenumbers(0)
    k_mean = float(np.sum(k * w) / np.sum(w))
    return data * np.exp(1j * (k_carrier - k_mean) * grid.axis(0))


def _band_filter(grid: Grid, data: np.ndarray, k_center: float,
                 half_full: float = 7.0, half_zero: float = 10.0) -> np.ndarray:
    """Smooth spectral bandpass around the lobe carrier.

    The hard collapse cut seeds faint broadband ripples; anything far outside
    the lobe's genuine momentum band would cross the periodic domain within a
    level and pile up at the boundaries, so it is removed here.
    """
    import scipy.fft as sfft
    from .wavefield import fft_workers

    k = grid.wavenumbers(0)
    u = (np.abs(k - k_center) - half_full) / (half_zero - half_full)
    w = np.clip(u, 0.0, 1.0)
    w = 0.5 + 0.5 * np.cos(np.pi * w)
    return sfft.ifft(sfft.fft(data, workers=fft_workers()) * w, workers=fft_workers())


def run_measured_pinball(
    geom: PinballGeometry,
    packet: PacketSpec,
    particle_q0: float,
    levels: int,
    *,
    grid: Grid | None = None,
    dt: float = 1e-3,
    eps_sep: float = 1e-4,
    sample_every: int = 10,
    vmax: float | None = None,
    leak_tol: float = 1e-6,
) -> MeasuredRun:
    """Iterated 1D engine: scatter, wait for separation, collapse, re-center.

    The perpendicular coordinate carries all the dynamics, so each level is
    one calibrated barrier scattering of the surviving lobe; the macroscopic
    lattice path follows from the record bits.
    """
    if not 1 <= levels <= 16:
        raise ValueError("levels must be in 1..16")
    if not 0.0 < particle_q0 < 1.0:
        raise ValueError("particle_q0 must be inside (0, 1)")
    barrier = geom.barrier
    if barrier.height <= 0:
        raise ValueError("measured runs need a calibrated (positive-height) barrier")
    if grid is None:
        # lobes broaden slowly with depth; deep runs need more room
        grid = Grid((512,), (48.0,)) if levels <= 13 else Grid((1024,), (96.0,))
    if grid.dims != 1:
        raise ValueError("the measured engine runs on a 1D grid")
    sigma = float(np.atleast_1d(packet.sigma)[0])
    k0 = float(np.atleast_1d(packet.momentum)[0])
    start = float(np.atleast_1d(packet.center)[0])
    if k0 <= 0 or start > -8 * sigma:
        raise ValueError("packet must start at least 8 sigma left of the barrier, moving right")
    if vmax is None:
        vmax = 10.0 * k0
    engine_barrier = Barrier(0.0, barrier.height, barrier.width)
    potential = bump_potential(engine_barrier, grid)
    stepper = SplitStepper(grid, potential, dt)
    x_axis = grid.axis(0)
    dx = grid.spacing[0]
    gap = 2 * barrier.width
    region_neg = Region((-grid.length[0] / 2,), (-gap,))
    region_pos = Region((gap,), (grid.length[0] / 2,))
    mask_neg = region_neg.mask(grid)
    mask_pos = region_pos.mask(grid)

    psi = gaussian_packet(grid, PacketSpec(start, k0, sigma))
    rho0 = marginal_1d(psi)
    x_p = quantile_position(grid, 0, rho0, particle_q0, direction=1)
    q0 = mass_ahead(grid, 0, rho0, x_p, 1)

    parity = 1          # lab direction of the current lobe (engine frame is always +x)
    offset = 0.0        # lab position = parity * engine position + offset
    launch = start      # per-level launch position, widened with the lobe
    record = DetectorRecord()
    weight = 1.0
    trajectory = Trajectory(0)
    trajectory.append(psi.time, (parity * x_p + offset,))
    q_values: list[float] = []
    q_after: list[float] = []
    nodes: list[int] = []
    collapse_times: list[float] = []
    capped = 0

    for level in range(levels):
        q_eng = internal_coordinate(psi, (x_p,), direction=1)
        q_values.append(q_eng if parity > 0 else 1.0 - q_eng)
        sigma_sep = max(sigma, _lobe_std_1d(grid, psi.density()))
        max_steps = int(3.0 * (abs(launch) + 14 * sigma_sep) / (k0 * dt))
        max_steps += -max_steps % 2

        detected = False
        f_start = VelocityField(grid, psi.data, vmax=vmax)
        f_mid = None
        pos = np.array([[x_p]])
        data, t = psi.data, psi.time
        t_arrival = psi.time + abs(launch) / k0  # lobe center cannot split earlier
        # coarse RK4 strides while the particle rides smooth field far from the
        # barrier, fine strides through the interaction / turnaround zone
        fine_zone = 4 * sigma_sep + 8 * barrier.width
        stride = 8 if abs(x_p) > fine_zone else 2
        since_advance = 0
        it = stepper.iterate(psi, max_steps)
        for j, (t, data, hat) in enumerate(it, start=1):
            since_advance += 1
            if since_advance * 2 == stride:
                f_mid = VelocityField(grid, data, hat, vmax=vmax)
                continue
            if since_advance < stride:
                continue
            f_end = VelocityField(grid, data, hat, vmax=vmax)
            pos = rk4_positions(grid, pos, f_start, f_mid, f_end, stride * dt)
            capped += f_start.capped + f_mid.capped
            f_start = f_end
            since_advance = 0
            stride = 8 if abs(pos[0, 0]) > fine_zone + 8 * stride * dt * k0 else 2
            if j % sample_every == 0:
                trajectory.append(t, (parity * pos[0, 0] + offset,))
            if j % 10 == 0 and t >= t_arrival:
                m_neg, m_pos, residual = _masked_masses(grid, data, mask_neg, mask_pos)
                if min(m_neg, m_pos) < 0.05:  # both lobes must have formed
                    continue
                if _lobe_separation(np.abs(data) ** 2, x_axis, dx, 0.0) < 6 * sigma_sep:
                    continue
                if residual >= eps_sep:
                    continue
                if region_neg.contains((pos[0, 0],)) == region_pos.contains((pos[0, 0],)):
                    continue
                it.close()
                detected = True
                break
        if not detected:
            raise SeparationTimeoutError(
                f"level {level}: lobes not separated within {max_steps} steps")
        capped += f_start.capped
        x_p = float(pos[0, 0])
        psi = Wavefunction(grid, data, t)

        # label regions lab-frame so the recorded bit is the lab branch
        lab_right, lab_left = ((region_pos, region_neg) if parity > 0
                               else (region_neg, region_pos))
        branch, bit = detect_and_collapse(Branch(psi, record, weight), (x_p,),
                                          region_r=lab_left, region_t=lab_right,
                                          eps_sep=eps_sep)
        record, weight, psi = branch.record, branch.weight, branch.psi
        direction_eng = 1 if x_p > 0 else -1
        q_eng_after = internal_coordinate(psi, (x_p,), direction=direction_eng)
        lab_dir = parity * direction_eng
        q_after.append(q_eng_after if lab_dir > 0 else 1.0 - q_eng_after)
        trajectory.events.append(
            ScatterEvent(level, q_values[-1], "T" if bit else "R", q_after[-1]))
        nodes.append(sum(record.bits))
        collapse_times.append(psi.time)

        # re-center: flip a reflected lobe forward, scrub masking ripples
        # (spatially far afield and spectrally outside the carrier band),
        # undo the dispersion chirp, and roll back to the launch position
        data = psi.data
        if direction_eng < 0:
            data = _flip(data)
            x_p = -x_p
            parity = -parity
        rho = np.abs(data) ** 2
        center = _position_mean_1d(grid, rho)
        lobe_std = _lobe_std_1d(grid, rho)
        half_span = max(14.0 * sigma, 5.0 * lobe_std + 6.0)
        window = Region((max(center - half_span, x_axis[0] + dx),),
                        (min(center + half_span, x_axis[-1] - dx),))
        cleaned = data * _soft_mask(grid, window, 8)
        cleaned = _recarrier(grid, _dechirp(grid, cleaned, width_target=sigma), k0)
        cleaned = _band_filter(grid, cleaned, k0)
        purged = 1.0 - float(np.sum(np.abs(cleaned) ** 2) * dx)
        if purged > 5e-2:
            raise RuntimeError(
                f"level {level}: lobe lost {purged:.3e} mass to the scrubbers")
        if purged > 1e-3:
            log.warning("level %d: scrubbed %.3e interface mass (deep-level lobe distortion)",
                        level, purged)
        log.debug("re-center: scrubbed %.3e artifact mass", purged)
        data = cleaned / np.sqrt(np.sum(np.abs(cleaned) ** 2) * dx)
        # launch wide lobes from further back, but keep the rear tail on-grid
        launch = -max(8.0 * sigma, 3.2 * lobe_std)
        launch = max(launch, x_axis[0] + 4.5 * lobe_std + 1.0)
        shift = int(round((launch - center) / dx))
        data = np.roll(data, shift)
        x_p = float(grid.wrap(np.array([x_p + shift * dx]))[0])
        offset -= parity * shift * dx
        psi = Wavefunction(grid, data, psi.time)

        leak = boundary_mass(grid, psi.data)
        if leak > leak_tol:
            raise RuntimeError(f"level {level}: boundary leak {leak:.3e} above {leak_tol:.1e}")

    return MeasuredRun(trajectory, record, weight, q0, q_values, q_after, nodes,
                       collapse_times, capped)


def run_unitary_pinball(
    geom: PinballGeometry,
    packet: PacketSpec,
    particle_positions,
    duration: float,
    *,
    grid: Grid,
    dt: float = 1e-3,
    vmax: float | None = None,
    sample_every: int = 10,
    leak_tol: float = 1e-6,
) -> TrajectoryRun:
    """Full 2D evolution of the uncollapsed field through the lattice."""
    if geom.levels > 3:
        raise ValueError("unitary runs support at most 3 rows (grid cost)")
    if grid.dims != 2:
        raise ValueError("unitary pinball runs are 2D")
    potential = build_potential(geom, grid)
    psi = gaussian_packet(grid, packet)
    if vmax is None:
        k = np.atleast_1d(packet.momentum)
        vmax = 10.0 * float(np.sqrt(np.sum(np.asarray(k, float) ** 2)))
    n_steps = int(round(duration / dt))
    n_steps += -n_steps % 2
    return integrate_trajectories(psi, potential, dt, n_steps, particle_positions,
                                  vmax=vmax, sample_every=sample_every, leak_tol=leak_tol)
