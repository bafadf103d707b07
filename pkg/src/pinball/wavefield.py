"""Wavefunctions on periodic grids and split-operator unitary stepping.

Natural units throughout: hbar = 1 and unit mass, so the free dispersion is
k^2/2 and a packet with wave vector k moves at speed k.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft


class PacketPlacementError(ValueError):
    """Packet support would reach the grid boundary."""


class PacketResolutionError(ValueError):
    """Packet width is too small for the grid spacing."""


def fft_workers() -> int:
    """Worker cap for spectral transforms (PINBALL_THREADS, default 1)."""
    try:
        return max(1, int(os.environ.get("PINBALL_THREADS", "1")))
    except ValueError:
        return 1


@lru_cache(maxsize=32)
def _axis_cached(n: int, length: float) -> np.ndarray:
    out = -length / 2 + (length / n) * np.arange(n)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _wavenumbers_cached(n: int, spacing: float) -> np.ndarray:
    out = 2.0 * np.pi * np.fft.fftfreq(n, d=spacing)
    out.setflags(write=False)
    return out


def _per_axis(value, dims: int, name: str) -> tuple[float, ...]:
    if np.isscalar(value):
        return (float(value),) * dims
    vals = tuple(float(v) for v in value)
    if len(vals) != dims:
        raise ValueError(f"{name}: expected {dims} components, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid centered on the origin, 1 or 2 axes.

    Axis d holds ``n[d]`` points spanning ``[-length[d]/2, length[d]/2)``;
    point counts must be powers of two (>= 64) so spectral steps stay cheap.
    """

    n: tuple[int, ...]
    length: tuple[float, ...]

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        length = tuple(float(v) for v in np.atleast_1d(self.length))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "length", length)
        if len(n) not in (1, 2) or len(length) != len(n):
            raise ValueError("grid needs 1 or 2 axes with one length per axis")
        for nv in n:
            if nv < 64 or nv & (nv - 1):
                raise ValueError(f"points per axis must be a power of two >= 64, got {nv}")
        for lv in length:
            if not lv > 0:
                raise ValueError("axis length must be positive")

    @property
    def dims(self) -> int:
        return len(self.n)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(lv / nv for lv, nv in zip(self.length, self.n))

    @property
    def cell_volume(self) -> float:
        vol = 1.0
        for s in self.spacing:
            vol *= s
        return vol

    def axis(self, d: int) -> np.ndarray:
        return _axis_cached(self.n[d], self.length[d])

    def wavenumbers(self, d: int) -> np.ndarray:
        return _wavenumbers_cached(self.n[d], self.spacing[d])

    def k_squared(self) -> np.ndarray:
        """|k|^2 broadcast over the grid shape."""
        if self.dims == 1:
            return self.wavenumbers(0) ** 2
        kx, ky = self.wavenumbers(0), self.wavenumbers(1)
        return kx[:, None] ** 2 + ky[None, :] ** 2

    def meshes(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays broadcastable over the grid shape."""
        if self.dims == 1:
            return (self.axis(0),)
        return (self.axis(0)[:, None], self.axis(1)[None, :])

    def wrap(self, position: np.ndarray) -> np.ndarray:
        """Map positions into the periodic fundamental domain."""
        lo = -np.asarray(self.length) / 2
        return (np.asarray(position, float) - lo) % np.asarray(self.length) + lo


@dataclass(frozen=True)
class Wavefunction:
    """Immutable snapshot of the complex amplitude field at one instant."""

    grid: Grid
    data: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.shape != self.grid.n:
            raise ValueError(f"amplitude shape {data.shape} != grid shape {self.grid.n}")
        if not np.all(np.isfinite(data.view(np.float64))):
            raise ValueError("amplitudes must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.data) ** 2) * self.grid.cell_volume))

    def density(self) -> np.ndarray:
        return np.abs(self.data) ** 2


@dataclass(frozen=True)
class PacketSpec:
    """Gaussian packet parameters: center, wave vector, and width per axis."""

    center: float | tuple[float, ...]
    momentum: float | tuple[float, ...]
    sigma: float | tuple[float, ...]


def gaussian_packet(grid: Grid, spec: PacketSpec) -> Wavefunction:
    """Normalized Gaussian ``exp(-(x-c)^2/4s^2 + i k.x)``, |psi|^2 std = sigma."""
    center = _per_axis(spec.center, grid.dims, "center")
    momentum = _per_axis(spec.momentum, grid.dims, "momentum")
    sigma = _per_axis(spec.sigma, grid.dims, "sigma")
    if any(s <= 0 for s in sigma):
        raise ValueError("sigma must be positive")
    kmag = float(np.sqrt(sum(k * k for k in momentum)))
    if kmag * min(sigma) < 5.0:
        raise ValueError(f"|k0|*sigma = {kmag * min(sigma):.3g} < 5: packet momentum under-resolved")
    for d in range(grid.dims):
        if sigma[d] < 4.0 * grid.spacing[d]:
            raise PacketResolutionError(
                f"axis {d}: sigma {sigma[d]:.4g} < 4 spacings ({4 * grid.spacing[d]:.4g})")
        lo, hi = -grid.length[d] / 2, grid.length[d] / 2
        if center[d] - 5 * sigma[d] < lo or center[d] + 5 * sigma[d] > hi:
            raise PacketPlacementError(
                f"axis {d}: center {center[d]:.4g} closer than 5 sigma to the boundary")
    data = np.ones(grid.n, dtype=np.complex128)
    for d, x in enumerate(grid.meshes()):
        data = data * np.exp(-((x - center[d]) ** 2) / (4 * sigma[d] ** 2) + 1j * momentum[d] * x)
    data /= np.sqrt(np.sum(np.abs(data) ** 2) * grid.cell_volume)
    return Wavefunction(grid, data, 0.0)


class SplitStepper:
    """Strang step for a fixed potential: half kinetic, full potential, half kinetic.

    Kinetic half steps apply exp(-i k^2 dt/4) in the spectral domain; the
    potential step applies exp(-i V dt) pointwise.  Every factor has unit
    modulus, so stepping is unitary to roundoff for any dt.
    """

    def __init__(self, grid: Grid, potential: np.ndarray | float, dt: float):
        if not np.isfinite(dt) or dt == 0.0:
            raise ValueError("dt must be finite and nonzero")
        v = np.broadcast_to(np.asarray(potential, dtype=np.float64), grid.n)
        if not np.all(np.isfinite(v)):
            raise ValueError("potential must be finite everywhere")
        self.grid = grid
        self.dt = float(dt)
        self.half_kinetic = np.exp(-0.25j * dt * grid.k_squared())
        self.potential_phase = np.exp(-1j * dt * v)
        if grid.dims == 1:
            # numpy's 1D path has far less dispatch overhead than scipy's
            self._fft, self._ifft = np.fft.fft, np.fft.ifft
        else:
            workers = fft_workers()
            self._fft = lambda a: sfft.fft2(a, workers=workers)
            self._ifft = lambda a: sfft.ifft2(a, workers=workers)

    def step(self, psi: Wavefunction) -> Wavefunction:
        hat = self._fft(psi.data) * self.half_kinetic
        mid = self._ifft(hat) * self.potential_phase
        out = self._ifft(self._fft(mid) * self.half_kinetic)
        return Wavefunction(self.grid, out, psi.time + self.dt)

    def iterate(self, psi: Wavefunction, n_steps: int):
        """Yield ``(time, data, hat)`` after each step.

        ``hat`` is the spectral image of ``data`` and is only valid until the
        next iteration; ``data`` is freshly allocated every step.
        """
        hat = self._fft(np.array(psi.data))
        t = psi.time
        for _ in range(n_steps):
            hat *= self.half_kinetic
            mid = self._ifft(hat)
            mid *= self.potential_phase
            hat = self._fft(mid)
            hat *= self.half_kinetic
            data = self._ifft(hat)
            t += self.dt
            yield t, data, hat

    def run(self, psi: Wavefunction, n_steps: int) -> Wavefunction:
        data, t = psi.data, psi.time
        for t, data, _ in self.iterate(psi, n_steps):
            pass
        return Wavefunction(self.grid, data, t)


def split_step(psi: Wavefunction, potential: np.ndarray | float, dt: float) -> Wavefunction:
    """One symmetric split-operator step of the Schroedinger evolution."""
    return SplitStepper(psi.grid, potential, dt).step(psi)


def spectral_gradient(grid: Grid, hat: np.ndarray, axis: int) -> np.ndarray:
    """d(psi)/dx_axis from the spectral image of psi."""
    k = grid.wavenumbers(axis)
    if grid.dims == 1:
        return np.fft.ifft(1j * k * hat)
    shape = [1] * grid.dims
    shape[axis] = grid.n[axis]
    return sfft.ifft2(1j * k.reshape(shape) * hat, workers=fft_workers())


@dataclass(frozen=True)
class Observables:
    norm: float
    position_mean: np.ndarray
    position_var: np.ndarray
    momentum_mean: np.ndarray


def observables(psi: Wavefunction) -> Observables:
    """Norm plus first/second position moments and the momentum first moment."""
    rho = psi.density()
    total = float(np.sum(rho))
    mean = np.empty(psi.grid.dims)
    var = np.empty(psi.grid.dims)
    axes = list(range(psi.grid.dims))
    for d in range(psi.grid.dims):
        other = tuple(a for a in axes if a != d)
        line = np.sum(rho, axis=other) if other else rho
        x = psi.grid.axis(d)
        m = float(np.sum(x * line) / total)
        mean[d] = m
        var[d] = float(np.sum((x - m) ** 2 * line) / total)
    hat = sfft.fftn(psi.data, workers=fft_workers())
    w = np.abs(hat) ** 2
    wtot = float(np.sum(w))
    kmean = np.empty(psi.grid.dims)
    for d in range(psi.grid.dims):
        other = tuple(a for a in axes if a != d)
        line = np.sum(w, axis=other) if other else w
        kmean[d] = float(np.sum(psi.grid.wavenumbers(d) * line) / wtot)
    return Observables(psi.norm, mean, var, kmean)


def marginal_1d(psi: Wavefunction, axis: int = 0) -> np.ndarray:
    """|psi|^2 integrated over the other axis; integrates to norm^2 on ``axis``."""
    rho = psi.density()
    if psi.grid.dims == 1:
        if axis != 0:
            raise ValueError("1D field has only axis 0")
        return rho
    other = 1 - axis
    return np.sum(rho, axis=other) * psi.grid.spacing[other]


# --- field snapshot files -------------------------------------------------
#
# Binary layout (little endian), 64-byte header then row-major float64
# re/im pairs:
#   magic "BPWF" | uint32 dims | uint32 n0 | uint32 n1 | float64 len0
#   | float64 len1 | float64 time | zero padding to byte 64

_HEADER = struct.Struct("<4s3I3d")
MAGIC = b"BPWF"
HEADER_SIZE = 64


def save_snapshot(psi: Wavefunction, path) -> None:
    g = psi.grid
    n1 = g.n[1] if g.dims == 2 else 0
    l1 = g.length[1] if g.dims == 2 else 0.0
    header = _HEADER.pack(MAGIC, g.dims, g.n[0], n1, g.length[0], l1, psi.time)
    header += b"\0" * (HEADER_SIZE - len(header))
    inter = np.empty(psi.data.size * 2, dtype="<f8")
    flat = psi.data.ravel()
    inter[0::2] = flat.real
    inter[1::2] = flat.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(inter.tobytes())


def load_snapshot(path) -> Wavefunction:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
        if len(raw) < HEADER_SIZE:
            raise ValueError("snapshot file truncated")
        magic, dims, n0, n1, l0, l1, time = _HEADER.unpack(raw[: _HEADER.size])
        if magic != MAGIC:
            raise ValueError("not a BPWF snapshot")
        grid = Grid((n0,), (l0,)) if dims == 1 else Grid((n0, n1), (l0, l1))
        count = int(np.prod(grid.n)) * 2
        inter = np.fromfile(fh, dtype="<f8", count=count)
    if inter.size != count:
        raise ValueError("snapshot data truncated")
    data = (inter[0::2] + 1j * inter[1::2]).reshape(grid.n)
    return Wavefunction(grid, data, time)


def save_csv(psi: Wavefunction, path, max_points: int = 1 << 16) -> None:
    """Plain-text field dump for small grids."""
    total = int(np.prod(psi.grid.n))
    if total > max_points:
        raise ValueError(f"grid too large for CSV export ({total} > {max_points} points)")
    g = psi.grid
    with open(path, "w", newline="\n") as fh:
        if g.dims == 1:
            fh.write("x,re,im\n")
            for x, a in zip(g.axis(0), psi.data):
                fh.write(f"{x!r},{a.real!r},{a.imag!r}\n")
        else:
            fh.write("x,y,re,im\n")
            xs, ys = g.axis(0), g.axis(1)
            for i, x in enumerate(xs):
                for j, y in enumerate(ys):
                    a = psi.data[i, j]
                    fh.write(f"{x!r},{y!r},{a.real!r},{a.imag!r}\n")
