"""Guidance-condition velocity field and trajectory integration.

The particle velocity is Im[grad(psi)/psi] (unit mass), evaluated off field
snapshots with spectral differentiation on the grid and linear (1D) or
bilinear (2D) interpolation to the particle position.  Trajectories advance
by RK4 steps that consume snapshots at t, t + dt/2, and t + dt, supplied in
lockstep by the PDE stepper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from .wavefield import Grid, SplitStepper, Wavefunction, fft_workers, marginal_1d, observables, spectral_gradient

NODE_FLOOR = 1e-30  # |psi|^2 below this is treated as a node, not underflow


class NodeRegionError(RuntimeError):
    """Velocity requested where |psi|^2 is below the node floor."""


class MultiLobeError(ValueError):
    """Operation needs a single-lobe packet; collapse or window first."""


@dataclass(frozen=True)
class BohmParticle:
    position: tuple[float, ...]
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in np.atleast_1d(self.position)))


@dataclass(frozen=True)
class ScatterEvent:
    level: int
    q_before: float
    branch: str  # lab-frame: "T" = emerges toward +x, "R" = toward -x
    q_after: float


@dataclass
class Trajectory:
    particle_id: int
    times: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def append(self, t: float, position) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory samples must be strictly increasing in time")
        self.times.append(float(t))
        self.positions.append(tuple(float(v) for v in np.atleast_1d(position)))


def _interp_periodic(grid: Grid, arrays: list[np.ndarray], positions: np.ndarray) -> list[np.ndarray]:
    """Sample grid arrays at arbitrary points; indices wrap periodically."""
    pos = np.atleast_2d(np.asarray(positions, float))
    if grid.dims == 1:
        x0, dx, n = -grid.length[0] / 2, grid.spacing[0], grid.n[0]
        fx = (pos[:, 0] - x0) / dx
        i0 = np.floor(fx).astype(np.int64)
        w = fx - i0
        i0 %= n
        i1 = (i0 + 1) % n
        return [a[i0] * (1 - w) + a[i1] * w for a in arrays]
    x0, dx, nx = -grid.length[0] / 2, grid.spacing[0], grid.n[0]
    y0, dy, ny = -grid.length[1] / 2, grid.spacing[1], grid.n[1]
    fx = (pos[:, 0] - x0) / dx
    fy = (pos[:, 1] - y0) / dy
    ix = np.floor(fx).astype(np.int64)
    iy = np.floor(fy).astype(np.int64)
    u = fx - ix
    v = fy - iy
    ix %= nx
    iy %= ny
    ix1 = (ix + 1) % nx
    iy1 = (iy + 1) % ny
    out = []
    for a in arrays:
        out.append(a[ix, iy] * (1 - u) * (1 - v)
                   + a[ix1, iy] * u * (1 - v)
                   + a[ix, iy1] * (1 - u) * v
                   + a[ix1, iy1] * u * v)
    return out


class VelocityField:
    """Guidance velocity sampled off one field snapshot.

    v = Im[grad(psi)/psi] is evaluated as J/rho with J = Im[psi* grad(psi)]
    and rho = |psi|^2; interpolating those two carrier-free fields instead of
    the oscillating amplitudes keeps the linear interpolation unbiased at
    large packet momentum.  Evaluations below the node floor raise;
    evaluations above ``vmax`` are rescaled to ``vmax`` and counted in
    ``capped`` (acceptance scenarios must report zero).
    """

    def __init__(self, grid: Grid, data: np.ndarray, hat: np.ndarray | None = None,
                 vmax: float | None = None):
        if hat is None:
            hat = sfft.fftn(data, workers=fft_workers())
        self.grid = grid
        self.rho = np.abs(data) ** 2
        conj = np.conj(data)
        self.currents = [np.imag(conj * spectral_gradient(grid, hat, d))
                         for d in range(grid.dims)]
        self.vmax = vmax
        self.capped = 0

    def __call__(self, positions: np.ndarray) -> np.ndarray:
        pos = np.atleast_2d(np.asarray(positions, float))
        if self.grid.dims == 1 and pos.shape[0] == 1:
            return self._single_1d(float(pos[0, 0]))
        values = _interp_periodic(self.grid, [self.rho] + self.currents, pos)
        density, currents = values[0], values[1:]
        if np.any(density < NODE_FLOOR):
            i = int(np.argmin(density))
            raise NodeRegionError(
                f"|psi|^2 = {density[i]:.3e} below node floor at {tuple(pos[i])}")
        vel = np.stack([j / density for j in currents], axis=1)
        if self.vmax is not None:
            speed = np.sqrt(np.sum(vel ** 2, axis=1))
            over = speed > self.vmax
            if np.any(over):
                self.capped += int(np.count_nonzero(over))
                vel[over] *= (self.vmax / speed[over])[:, None]
        return vel

    def _single_1d(self, x: float) -> np.ndarray:
        # scalar path: the iterated engine advances one particle per field
        n = self.grid.n[0]
        length = self.grid.length[0]
        f = (x + length / 2) * n / length
        i0 = int(np.floor(f))
        w = f - i0
        i0 %= n
        i1 = i0 + 1 if i0 + 1 < n else 0
        rho = self.rho
        density = float(rho[i0]) * (1 - w) + float(rho[i1]) * w
        if density < NODE_FLOOR:
            raise NodeRegionError(f"|psi|^2 = {density:.3e} below node floor at ({x},)")
        cur = self.currents[0]
        v = (float(cur[i0]) * (1 - w) + float(cur[i1]) * w) / density
        if self.vmax is not None and abs(v) > self.vmax:
            self.capped += 1
            v = self.vmax if v > 0 else -self.vmax
        return np.array([[v]])


def velocity(psi: Wavefunction, position, vmax: float | None = None) -> np.ndarray:
    """Guidance velocity at one position."""
    return VelocityField(psi.grid, psi.data, vmax=vmax)(np.atleast_2d(position))[0]


def rk4_positions(grid: Grid, positions: np.ndarray, f_start: VelocityField,
                  f_mid: VelocityField, f_end: VelocityField, dt: float) -> np.ndarray:
    k1 = f_start(positions)
    k2 = f_mid(positions + 0.5 * dt * k1)
    k3 = f_mid(positions + 0.5 * dt * k2)
    k4 = f_end(positions + dt * k3)
    return grid.wrap(positions + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))


def advance(particle: BohmParticle, psi_at_substeps, dt: float,
            vmax: float | None = None) -> BohmParticle:
    """One RK4 step using field snapshots at t, t + dt/2, and t + dt."""
    start, mid, end = psi_at_substeps
    fields = [p if isinstance(p, VelocityField) else VelocityField(p.grid, p.data, vmax=vmax)
              for p in (start, mid, end)]
    grid = fields[0].grid
    pos = np.atleast_2d(np.asarray(particle.position, float))
    out = rk4_positions(grid, pos, *fields, dt)
    return BohmParticle(tuple(out[0]), particle.time + dt)


def boundary_mass(grid: Grid, data: np.ndarray, cells: int = 5) -> float:
    """Probability within ``cells`` grid cells of any boundary."""
    rho = np.abs(data) ** 2
    mask = np.zeros(grid.n, dtype=bool)
    for d in range(grid.dims):
        idx = [slice(None)] * grid.dims
        idx[d] = slice(0, cells)
        mask[tuple(idx)] = True
        idx[d] = slice(-cells, None)
        mask[tuple(idx)] = True
    return float(np.sum(rho[mask]) * grid.cell_volume)


@dataclass
class TrajectoryRun:
    psi: Wavefunction
    times: list
    history: list  # per sample: (n_particles, dims) positions
    positions: np.ndarray
    capped: int

    def trajectories(self) -> list[Trajectory]:
        out = []
        for i in range(self.positions.shape[0]):
            tr = Trajectory(i)
            for t, snap in zip(self.times, self.history):
                tr.append(t, snap[i])
            out.append(tr)
        return out


def integrate_trajectories(
    psi: Wavefunction,
    potential,
    dt: float,
    n_steps: int,
    positions,
    *,
    vmax: float | None = None,
    sample_every: int = 10,
    particle_stride: int = 2,
    leak_tol: float | None = None,
) -> TrajectoryRun:
    """Evolve the field and an ensemble in lockstep.

    Particles take RK4 steps of ``particle_stride * dt`` (stride must be even
    so the midpoint snapshot exists); field and particles stay synchronous.
    """
    if particle_stride < 2 or particle_stride % 2:
        raise ValueError("particle_stride must be an even integer >= 2")
    if sample_every % particle_stride:
        raise ValueError("sample_every must be a multiple of particle_stride")
    if n_steps % particle_stride:
        raise ValueError("n_steps must be a multiple of particle_stride")
    grid = psi.grid
    pos = np.atleast_2d(np.asarray(positions, float)).copy()
    stepper = SplitStepper(grid, potential, dt)
    f_start = VelocityField(grid, psi.data, vmax=vmax)
    capped = 0
    times = [psi.time]
    history = [pos.copy()]
    half = particle_stride // 2
    f_mid = None
    data, t = psi.data, psi.time
    for j, (t, data, hat) in enumerate(stepper.iterate(psi, n_steps), start=1):
        r = j % particle_stride
        if r == half:
            f_mid = VelocityField(grid, data, hat, vmax=vmax)
        elif r == 0:
            f_end = VelocityField(grid, data, hat, vmax=vmax)
            pos = rk4_positions(grid, pos, f_start, f_mid, f_end, particle_stride * dt)
            capped += f_start.capped + f_mid.capped
            f_start = f_end
            if j % sample_every == 0:
                times.append(t)
                history.append(pos.copy())
        if leak_tol is not None and j % 50 == 0:
            leak = boundary_mass(grid, data)
            if leak > leak_tol:
                raise RuntimeError(
                    f"boundary leak {leak:.3e} above {leak_tol:.1e} at t={t:.4f}")
    capped += f_start.capped
    return TrajectoryRun(Wavefunction(grid, data, t), times, history, pos, capped)


# --- |psi|^2 sampling and the quantile internal coordinate -----------------


def _cell_masses(rho: np.ndarray, dx: float) -> np.ndarray:
    return rho * dx


def sample_ensemble(psi: Wavefunction, count: int, rng_seed: int) -> np.ndarray:
    """Positions i.i.d. from |psi|^2 via inverse-CDF; deterministic per seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    grid = psi.grid
    if grid.dims == 1:
        rho = psi.density()
        return _sample_axis(grid, 0, rho, rng.random(count))[:, None]
    rho = psi.density()
    marg = np.sum(rho, axis=1)
    xs = _sample_axis_indices(marg, rng.random(count))
    x0, dx = -grid.length[0] / 2, grid.spacing[0]
    jitter = rng.random(count)
    pos = np.empty((count, 2))
    u2 = rng.random(count)
    y0, dy = -grid.length[1] / 2, grid.spacing[1]
    for i in range(count):
        ix = xs[i]
        pos[i, 0] = x0 + (ix + jitter[i] - 0.5) * dx
        col = rho[ix]
        cum = np.concatenate(([0.0], np.cumsum(col)))
        target = u2[i] * cum[-1]
        j = min(np.searchsorted(cum, target, side="right") - 1, grid.n[1] - 1)
        frac = (target - cum[j]) / col[j] if col[j] > 0 else 0.5
        pos[i, 1] = y0 + (j + frac - 0.5) * dy
    return pos


def _sample_axis_indices(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.concatenate(([0.0], np.cumsum(weights)))
    targets = u * cum[-1]
    idx = np.searchsorted(cum, targets, side="right") - 1
    return np.clip(idx, 0, len(weights) - 1)


def _sample_axis(grid: Grid, axis: int, rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.concatenate(([0.0], np.cumsum(rho)))
    targets = u * cum[-1]
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, grid.n[axis] - 1)
    frac = np.where(rho[idx] > 0, (targets - cum[idx]) / np.where(rho[idx] > 0, rho[idx], 1.0), 0.5)
    lo = -grid.length[axis] / 2
    return lo + (idx + frac - 0.5) * grid.spacing[axis]


def _single_lobe_mass_fraction(rho: np.ndarray) -> float:
    above = rho >= 1e-8 * rho.max()
    labels, _ = ndimage.label(above)
    main = labels[int(np.argmax(rho))]
    return float(np.sum(rho[labels == main]) / np.sum(rho))


def propagation_sign(psi: Wavefunction, axis: int = 0) -> int:
    """Sign of the mean momentum along ``axis``."""
    k = observables(psi).momentum_mean[axis]
    if abs(k) < 1e-6:
        raise ValueError("packet has no propagation direction along this axis")
    return 1 if k > 0 else -1


def mass_ahead(grid: Grid, axis: int, rho_line: np.ndarray, position: float,
               direction: int) -> float:
    """Probability mass strictly ahead of ``position`` (sub-cell linear split)."""
    dx = grid.spacing[axis]
    lo = -grid.length[axis] / 2
    masses = rho_line * dx
    total = float(np.sum(masses))
    p = float(position)
    j = int(np.floor((p - (lo - dx / 2)) / dx))
    j = max(0, min(j, len(rho_line) - 1))
    right_edge = lo + (j + 0.5) * dx
    if direction > 0:
        ahead = float(np.sum(masses[j + 1:])) + float(rho_line[j]) * max(0.0, right_edge - p)
    else:
        left_edge = right_edge - dx
        ahead = float(np.sum(masses[:j])) + float(rho_line[j]) * max(0.0, p - left_edge)
    return min(max(ahead / total, 0.0), 1.0)


def quantile_position(grid: Grid, axis: int, rho_line: np.ndarray, q: float,
                      direction: int) -> float:
    """Inverse of ``mass_ahead``: position with mass q strictly ahead."""
    if not 0.0 < q < 1.0:
        raise ValueError("quantile must be inside (0, 1)")
    dx = grid.spacing[axis]
    lo = -grid.length[axis] / 2
    masses = rho_line * dx
    total = float(np.sum(masses))
    behind = (1.0 - q) * total
    cum = np.concatenate(([0.0], np.cumsum(masses)))
    if direction > 0:
        j = int(np.searchsorted(cum, behind, side="right") - 1)
        j = max(0, min(j, len(masses) - 1))
        frac = (behind - cum[j]) / masses[j] if masses[j] > 0 else 0.5
        return lo + (j + frac - 0.5) * dx
    ahead = q * total
    j = int(np.searchsorted(cum, ahead, side="right") - 1)
    j = max(0, min(j, len(masses) - 1))
    frac = (ahead - cum[j]) / masses[j] if masses[j] > 0 else 0.5
    return lo + (j + frac - 0.5) * dx


def internal_coordinate(psi: Wavefunction, position, axis: int = 0,
                        direction: int | None = None) -> float:
    """Front-measured quantile: mass strictly ahead of the particle in the
    propagation direction along the 1D marginal.  q < 1/2 means front half."""
    rho_line = marginal_1d(psi, axis)
    frac = _single_lobe_mass_fraction(rho_line)
    if frac < 0.99:
        raise MultiLobeError(f"main lobe holds {frac:.4f} < 0.99 of the mass")
    if direction is None:
        direction = propagation_sign(psi, axis)
    p = np.atleast_1d(np.asarray(position, float))[axis if np.ndim(position) else 0]
    return mass_ahead(psi.grid, axis, rho_line, float(p), direction)


# --- empirical distribution checks ------------------------------------------


def cdf_from_line(grid: Grid, axis: int, rho_line: np.ndarray):
    """Piecewise-linear CDF of a cell-sampled 1D density."""
    dx = grid.spacing[axis]
    lo = -grid.length[axis] / 2
    edges = lo - dx / 2 + dx * np.arange(len(rho_line) + 1)
    cum = np.concatenate(([0.0], np.cumsum(rho_line * dx)))
    cum /= cum[-1]

    def cdf(x):
        return np.interp(x, edges, cum)

    return cdf


def ks_statistic(samples: np.ndarray, cdf) -> float:
    """Kolmogorov-Smirnov distance between samples and a reference CDF."""
    xs = np.sort(np.asarray(samples, float))
    n = len(xs)
    f = np.asarray(cdf(xs), float)
    grid_hi = np.arange(1, n + 1) / n
    grid_lo = np.arange(0, n) / n
    return float(max(np.max(grid_hi - f), np.max(f - grid_lo)))


# --- CSV export --------------------------------------------------------------


def write_trajectories_csv(path, trajectories: list[Trajectory]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("t,x,y,trajectory_id\n")
        for tr in trajectories:
            for t, pos in zip(tr.times, tr.positions):
                y = repr(pos[1]) if len(pos) > 1 else ""
                fh.write(f"{t!r},{pos[0]!r},{y},{tr.particle_id}\n")


def write_events_csv(path, trajectories: list[Trajectory]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("trajectory_id,level,q_before,branch,q_after\n")
        for tr in trajectories:
            for ev in tr.events:
                fh.write(f"{tr.particle_id},{ev.level},{ev.q_before!r},{ev.branch},{ev.q_after!r}\n")
