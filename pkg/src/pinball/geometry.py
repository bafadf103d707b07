"""Barriers, the triangular pinball lattice, and half-transmission calibration.

Lattice orientation is fixed project-wide: axis 0 is the scattering axis
(perpendicular to the barrier ridges, the only coordinate the barriers act
on) and axis 1 is the drift axis along which the packet advances from row to
row.  Arm and branch names are lab-frame: branch "T" is always the +x side
of a node, matching detector bit 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .wavefield import Grid, PacketSpec, SplitStepper, Wavefunction, gaussian_packet, marginal_1d


class SeparationTimeoutError(RuntimeError):
    """Scattered lobes failed to separate within the step budget."""


class CalibrationError(RuntimeError):
    """Transmission target is not bracketed by the height scan."""


@dataclass(frozen=True)
class Barrier:
    """Gaussian bump V(d) = height * exp(-d^2 / 2 width^2), d = distance to center."""

    center: float
    height: float
    width: float

    def __post_init__(self):
        if self.height < 0:
            raise ValueError("barrier height must be >= 0")
        if self.width <= 0:
            raise ValueError("barrier width must be > 0")

    def with_height(self, height: float) -> "Barrier":
        return Barrier(self.center, height, self.width)


def bump_potential(barrier: Barrier, grid: Grid) -> np.ndarray:
    """1D potential field of a single bump."""
    if grid.dims != 1:
        raise ValueError("bump_potential builds 1D fields; use build_potential for lattices")
    if barrier.width < 2 * grid.spacing[0]:
        raise ValueError(f"barrier width {barrier.width:.4g} under-resolved on spacing {grid.spacing[0]:.4g}")
    x = grid.axis(0)
    lo, hi = x[0], x[-1]
    if barrier.center - 5 * barrier.width < lo or barrier.center + 5 * barrier.width > hi:
        raise ValueError("barrier outside grid (needs a 5-width margin)")
    d = x - barrier.center
    return barrier.height * np.exp(-(d ** 2) / (2 * barrier.width ** 2))


@dataclass(frozen=True)
class Region:
    """Axis-aligned box; containment is strict-interior."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate region {lo}..{hi}")

    def contains(self, position) -> bool:
        p = np.atleast_1d(np.asarray(position, float))
        return bool(np.all(p > self.lo) and np.all(p < self.hi))

    def mask(self, grid: Grid) -> np.ndarray:
        """Boolean grid mask of cells whose centers lie inside the box."""
        if len(self.lo) != grid.dims:
            raise ValueError("region/grid dimensionality mismatch")
        m = np.ones(grid.n, dtype=bool)
        for d in range(grid.dims):
            x = grid.axis(d)
            inside = (x > self.lo[d]) & (x < self.hi[d])
            shape = [1] * grid.dims
            shape[d] = grid.n[d]
            m &= inside.reshape(shape)
        return m

    def overlaps(self, other: "Region") -> bool:
        return all(a_lo < b_hi and b_lo < a_hi
                   for a_lo, a_hi, b_lo, b_hi in zip(self.lo, self.hi, other.lo, other.hi))


@dataclass(frozen=True)
class PinballGeometry:
    """Triangular lattice of identical ridges inside a triangle.

    Row ``level`` (0-based) holds ``level + 1`` ridges at columns
    ``apex_x + (node - level/2) * pitch`` and drift position
    ``apex_y + level * row_spacing``.  Each ridge is the 1D bump profile of
    ``barrier`` along x, gated along the drift axis by a smooth plateau of
    half-height ``window_half`` with tanh shoulders of scale ``window_edge``
    so every slice of a packet crossing a node sees the calibrated 1D bump.
    """

    levels: int
    pitch: float
    row_spacing: float
    barrier: Barrier
    apex: tuple[float, float] = (0.0, 0.0)
    window_half: float = 6.0
    window_edge: float = 0.35

    def __post_init__(self):
        if self.levels < 0:
            raise ValueError("row count must be >= 0 (0 = empty lattice)")
        if self.pitch <= 0 or self.row_spacing <= 0:
            raise ValueError("pitch and row spacing must be positive")
        if self.pitch / 2 <= 4 * self.barrier.width:
            raise ValueError("pitch too small: arm regions would be empty")
        if self.window_half + 3 * self.window_edge >= self.row_spacing:
            raise ValueError("ridge window overlaps the same column of the next-but-one row")
        if self.window_half < 17 * self.window_edge:
            raise ValueError("window plateau too short for its shoulders (need half >= 17 edge)")

    def node_position(self, level: int, node: int) -> tuple[float, float]:
        if not 0 <= level < self.levels or not 0 <= node <= level:
            raise IndexError(f"no node ({level}, {node}) in a {self.levels}-level lattice")
        return (self.apex[0] + (node - level / 2) * self.pitch,
                self.apex[1] + level * self.row_spacing)

    def nodes(self):
        for level in range(self.levels):
            for node in range(level + 1):
                yield level, node

    def row_drift(self, level: int) -> float:
        return self.apex[1] + level * self.row_spacing


@dataclass(frozen=True)
class DetectorLayout:
    """One passage detector per arm region when enabled."""

    enabled: bool = True

    def arm_keys(self, geom: PinballGeometry) -> tuple[tuple[int, int, str], ...]:
        if not self.enabled:
            return ()
        return tuple((lvl, node, branch)
                     for lvl, node in geom.nodes() for branch in ("R", "T"))


def _window(u: np.ndarray, half: float, edge: float) -> np.ndarray:
    return 0.5 * (np.tanh((u + half) / edge) - np.tanh((u - half) / edge))


def build_potential(geom: PinballGeometry, grid: Grid) -> np.ndarray:
    """Sum of ridge bumps over the lattice on a 2D grid."""
    if grid.dims != 2:
        raise ValueError("pinball lattices are 2D; use bump_potential in 1D")
    w = geom.barrier.width
    if geom.levels > 0 and w < 2 * grid.spacing[0]:
        raise ValueError("barrier width under-resolved on the scattering axis")
    x = grid.axis(0)[:, None]
    y = grid.axis(1)[None, :]
    v = np.zeros(grid.n)
    y_margin = geom.window_half + 5 * geom.window_edge
    for level, node in geom.nodes():
        cx, cy = geom.node_position(level, node)
        if cx - 5 * w < x[0, 0] or cx + 5 * w > x[-1, 0]:
            raise ValueError(f"node ({level}, {node}) outside grid on the scattering axis")
        if cy - y_margin < y[0, 0] or cy + y_margin > y[0, -1]:
            raise ValueError(f"node ({level}, {node}) outside grid on the drift axis")
        v += (geom.barrier.height
              * np.exp(-((x - cx) ** 2) / (2 * w ** 2))
              * _window(y - cy, geom.window_half, geom.window_edge))
    return v


def arm_region_of(geom: PinballGeometry, level: int, node: int, branch: str) -> Region:
    """Inter-row rectangle on the R (-x) or T (+x) side of a node.

    Arms start one detector gap (2 barrier widths) beyond the node column and
    beyond the row lines, and stop the same gap short of the neighboring
    column, so the arms of one inter-row band tile it minus the column gaps.
    """
    if branch not in ("R", "T"):
        raise IndexError(f"branch must be 'R' or 'T', got {branch!r}")
    cx, cy = geom.node_position(level, node)  # raises IndexError out of range
    gap = 2 * geom.barrier.width
    half_pitch = geom.pitch / 2
    if branch == "T":
        x_lo, x_hi = cx + gap, cx + half_pitch - gap
    else:
        x_lo, x_hi = cx - half_pitch + gap, cx - gap
    return Region((x_lo, cy + gap), (x_hi, cy + geom.row_spacing - gap))


def all_arm_regions(geom: PinballGeometry) -> dict[tuple[int, int, str], Region]:
    return {key: arm_region_of(geom, *key) for key in DetectorLayout().arm_keys(geom)}


# --- transmission and calibration ------------------------------------------


def _side_masses(rho: np.ndarray, x: np.ndarray, dx: float, split: float) -> tuple[float, float]:
    behind = float(np.sum(rho[x < split]) * dx)
    beyond = float(np.sum(rho[x > split]) * dx)
    return behind, beyond


def _lobe_separation(rho: np.ndarray, x: np.ndarray, dx: float, split: float) -> float:
    """Distance between the mass centroids on either side of the split point."""
    left = x < split
    right = x > split
    m_l = np.sum(rho[left]) * dx
    m_r = np.sum(rho[right]) * dx
    if m_l < 1e-9 or m_r < 1e-9:
        return np.inf
    c_l = np.sum((x * rho)[left]) * dx / m_l
    c_r = np.sum((x * rho)[right]) * dx / m_r
    return float(c_r - c_l)


def transmission_coefficient(
    barrier: Barrier,
    packet: PacketSpec,
    grid: Grid,
    dt: float = 1e-3,
    max_steps: int | None = None,
    check_every: int = 10,
) -> float:
    """Probability mass ending strictly beyond the barrier center.

    Runs the 1D scattering until the reflected and transmitted lobes are at
    least 6 sigma apart (or one of them is empty) and the interaction zone
    has drained.
    """
    if grid.dims != 1:
        raise ValueError("transmission runs are 1D")
    center = float(np.atleast_1d(packet.center)[0])
    k = float(np.atleast_1d(packet.momentum)[0])
    sigma = float(np.atleast_1d(packet.sigma)[0])
    gap = barrier.center - center
    if abs(gap) < 8 * sigma:
        raise ValueError("launch the packet at least 8 sigma from the barrier")
    if k * gap <= 0:
        raise ValueError("packet momentum must point at the barrier")
    if max_steps is None:
        max_steps = int(2.5 * (abs(gap) + 12 * sigma) / (abs(k) * dt))

    psi = gaussian_packet(grid, packet)
    stepper = SplitStepper(grid, bump_potential(barrier, grid), dt)
    x = grid.axis(0)
    dx = grid.spacing[0]
    zone = np.abs(x - barrier.center) <= max(4 * barrier.width, 2 * dx)
    t_min = abs(gap) / abs(k)  # packet cannot have cleared the barrier earlier

    steps = 0
    data = psi.data
    it = stepper.iterate(psi, max_steps)
    for t, data, _ in it:
        steps += 1
        if steps % check_every or t < t_min:
            continue
        rho = np.abs(data) ** 2
        if float(np.sum(rho[zone]) * dx) > 1e-6:
            continue
        if _lobe_separation(rho, x, dx, barrier.center) >= 6 * sigma:
            it.close()
            break
    else:
        raise SeparationTimeoutError(
            f"lobes not separated after {max_steps} steps (dt={dt})")

    rho = np.abs(data) ** 2
    _, beyond = _side_masses(rho, x, dx, barrier.center)
    return beyond


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of the bisection on barrier height for a transmission target."""

    height: float
    transmission: float
    target: float
    width: float
    samples: tuple[tuple[float, float], ...]  # (height, T) in evaluation order

    @property
    def barrier(self) -> Barrier:
        return Barrier(0.0, self.height, self.width)


def calibrate_half_transmission(
    width: float,
    packet: PacketSpec,
    grid: Grid,
    tol: float = 1e-3,
    dt: float = 1e-3,
    target: float = 0.5,
) -> CalibrationResult:
    """Bisect barrier height until |T - target| <= tol (default target 1/2)."""
    if tol < 1e-3:
        raise ValueError("tol below 1e-3 is outside the calibration contract")
    if not 0 < target < 1:
        raise ValueError("target transmission must be inside (0, 1)")
    k = float(np.atleast_1d(packet.momentum)[0])
    energy = k * k / 2
    samples: list[tuple[float, float]] = []

    def probe(h: float) -> float:
        t = transmission_coefficient(Barrier(0.0, h, width), packet, grid, dt=dt)
        samples.append((h, t))
        return t

    lo, t_lo = 0.0, probe(0.0)
    hi = 2.0 * energy
    t_hi = probe(hi)
    doublings = 0
    while t_hi > target:
        doublings += 1
        if doublings > 8:
            raise CalibrationError(
                f"no transmission crossing of {target}: T({lo})={t_lo:.6f}, T({hi})={t_hi:.6f}")
        hi *= 2.0
        t_hi = probe(hi)
    if t_lo < target:
        raise CalibrationError(
            f"no transmission crossing of {target}: T({lo})={t_lo:.6f}, T({hi})={t_hi:.6f}")

    best_h, best_t = (hi, t_hi) if abs(t_hi - target) < abs(t_lo - target) else (lo, t_lo)
    for _ in range(80):
        if abs(best_t - target) <= tol:
            break
        mid = 0.5 * (lo + hi)
        t_mid = probe(mid)
        if abs(t_mid - target) < abs(best_t - target):
            best_h, best_t = mid, t_mid
        if t_mid > target:
            lo, t_lo = mid, t_mid
        else:
            hi, t_hi = mid, t_mid
    else:
        raise CalibrationError(f"bisection stalled at T={best_t:.6f} for tol={tol}")

    return CalibrationResult(best_h, best_t, target, width, tuple(samples))
