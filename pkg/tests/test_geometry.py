"""Barrier fields, lattice arms, and transmission calibration."""

import numpy as np
import pytest
from scipy import ndimage

from pinball.geometry import (
    Barrier,
    CalibrationResult,
    DetectorLayout,
    PinballGeometry,
    Region,
    all_arm_regions,
    arm_region_of,
    build_potential,
    bump_potential,
    calibrate_half_transmission,
    transmission_coefficient,
)
from pinball.wavefield import Grid, PacketSpec, SplitStepper, gaussian_packet

from conftest import BARRIER_WIDTH, ENGINE_GRID, ENGINE_PACKET


def lattice(levels=3, height=50.0):
    return PinballGeometry(levels=levels, pitch=16.0, row_spacing=8.0,
                           barrier=Barrier(0.0, height, 0.25))


class TestBarrierFields:
    def test_barrier_validation(self):
        with pytest.raises(ValueError):
            Barrier(0.0, -1.0, 0.25)
        with pytest.raises(ValueError):
            Barrier(0.0, 10.0, 0.0)

    def test_bump_center_value_closed_form(self):
        grid = Grid((1024,), (64.0,))
        v = bump_potential(Barrier(0.0, 75.0, 0.25), grid)
        assert v[512] == 75.0  # axis hits the center exactly
        assert abs(v[512 + 8] - 75.0 * np.exp(-(8 * grid.spacing[0]) ** 2 / (2 * 0.25 ** 2))) < 1e-12

    def test_bump_outside_grid(self):
        grid = Grid((1024,), (64.0,))
        with pytest.raises(ValueError, match="outside"):
            bump_potential(Barrier(31.9, 10.0, 0.25), grid)

    def test_empty_lattice_zero_field(self):
        geom = PinballGeometry(levels=0, pitch=16.0, row_spacing=8.0,
                               barrier=Barrier(0.0, 50.0, 0.25))
        grid = Grid((128, 128), (64.0, 64.0))
        assert np.all(build_potential(geom, grid) == 0.0)

    def test_single_ridge_center_value(self):
        geom = lattice(levels=1, height=75.0)
        grid = Grid((512, 512), (64.0, 64.0))
        v = build_potential(geom, grid)
        # apex (0, 0) is a grid point
        assert abs(v[256, 256] - 75.0) < 1e-9

    def test_three_level_lattice_has_six_peaks(self):
        geom = lattice(levels=3)
        grid = Grid((512, 512), (64.0, 64.0))
        v = build_potential(geom, grid)
        near_max = v >= (1.0 - 1e-6) * v.max()
        _, count = ndimage.label(near_max)
        assert count == 6  # 1 + 2 + 3 ridges

    def test_node_outside_grid_rejected(self):
        geom = lattice(levels=3)
        with pytest.raises(ValueError, match="outside"):
            build_potential(geom, Grid((128, 128), (16.0, 64.0)))

    def test_geometry_validation(self):
        with pytest.raises(ValueError, match="pitch"):
            PinballGeometry(levels=1, pitch=1.0, row_spacing=8.0,
                            barrier=Barrier(0.0, 50.0, 0.25))
        with pytest.raises(ValueError, match="window"):
            PinballGeometry(levels=1, pitch=16.0, row_spacing=4.0,
                            barrier=Barrier(0.0, 50.0, 0.25))


class TestArmRegions:
    def test_level0_arms_disjoint(self):
        geom = lattice()
        r = arm_region_of(geom, 0, 0, "R")
        t = arm_region_of(geom, 0, 0, "T")
        assert not r.overlaps(t)
        assert t.lo[0] == pytest.approx(2 * geom.barrier.width)

    def test_twelve_disjoint_arms(self):
        geom = lattice()
        arms = all_arm_regions(geom)
        assert len(arms) == 12  # 2 arms per node, 6 nodes
        keys = list(arms)
        for i, a in enumerate(keys):
            for b in keys[i + 1:]:
                assert not arms[a].overlaps(arms[b]), (a, b)

    def test_arms_tile_band_minus_column_gaps(self):
        # probe the first inter-row band: inside iff clear of every column gap
        geom = lattice()
        arms = [arm_region_of(geom, 0, 0, "R"), arm_region_of(geom, 0, 0, "T")]
        gap = 2 * geom.barrier.width
        columns = [-8.0, 0.0, 8.0]  # row-0 and row-1 node columns
        y_probe = geom.row_spacing / 2
        for x in np.linspace(-8.0 + 1e-6, 8.0 - 1e-6, 401):
            hits = sum(a.contains((x, y_probe)) for a in arms)
            in_gap = any(abs(x - c) <= gap for c in columns)
            assert hits == (0 if in_gap else 1), x

    def test_index_errors(self):
        geom = lattice()
        with pytest.raises(IndexError):
            arm_region_of(geom, 3, 0, "T")
        with pytest.raises(IndexError):
            arm_region_of(geom, 1, 2, "T")
        with pytest.raises(IndexError):
            arm_region_of(geom, 0, 0, "X")

    def test_detector_layout_one_per_arm(self):
        geom = lattice()
        assert len(DetectorLayout(True).arm_keys(geom)) == 12
        assert DetectorLayout(False).arm_keys(geom) == ()


class TestRegion:
    def test_strict_interior(self):
        r = Region((0.0,), (1.0,))
        assert r.contains(0.5)
        assert not r.contains(0.0)
        assert not r.contains(1.0)

    def test_mask_cells(self):
        g = Grid((64,), (64.0,))
        m = Region((-1.0,), (1.0,)).mask(g)
        assert m.sum() == 1  # only the cell centered at 0


class TestTransmission:
    def test_free_propagation_fully_transmitted(self):
        t = transmission_coefficient(Barrier(0.0, 0.0, 0.25), ENGINE_PACKET, ENGINE_GRID)
        assert t == pytest.approx(1.0, abs=1e-6)

    def test_hard_wall_blocks(self):
        # 50x the packet kinetic energy
        t = transmission_coefficient(Barrier(0.0, 2500.0, 0.25), ENGINE_PACKET, ENGINE_GRID)
        assert t < 1e-3

    def test_monotone_on_bracket(self):
        heights = np.linspace(0.0, 100.0, 8)
        ts = [transmission_coefficient(Barrier(0.0, h, 0.25), ENGINE_PACKET, ENGINE_GRID)
              for h in heights]
        assert all(a >= b - 1e-9 for a, b in zip(ts, ts[1:]))
        # midpoint of any bracketing pair falls strictly between its endpoints
        assert ts[0] > ts[3] > ts[-1]

    def test_scattering_unitarity(self, half_calibration):
        # behind + beyond masses re-derived from a fresh run
        barrier = half_calibration.barrier
        psi = gaussian_packet(ENGINE_GRID, ENGINE_PACKET)
        from pinball.geometry import bump_potential as bp
        psi = SplitStepper(ENGINE_GRID, bp(barrier, ENGINE_GRID), 1e-3).run(psi, 1500)
        x = ENGINE_GRID.axis(0)
        rho = psi.density()
        dx = ENGINE_GRID.spacing[0]
        r = float(np.sum(rho[x < 0.0]) * dx)
        t = float(np.sum(rho[x > 0.0]) * dx)
        assert r + t == pytest.approx(1.0, abs=1e-6)

    def test_launch_preconditions(self):
        with pytest.raises(ValueError, match="8 sigma"):
            transmission_coefficient(Barrier(0.0, 50.0, 0.25),
                                     PacketSpec(-4.0, 10.0, 1.0), ENGINE_GRID)
        with pytest.raises(ValueError, match="momentum"):
            transmission_coefficient(Barrier(0.0, 50.0, 0.25),
                                     PacketSpec(-9.0, -10.0, 1.0), ENGINE_GRID)


class TestCalibration:
    def test_half_transmission_reached(self, half_calibration):
        assert abs(half_calibration.transmission - 0.5) <= 1e-3
        assert half_calibration.height > 0
        assert isinstance(half_calibration, CalibrationResult)

    def test_reproducible_bit_for_bit(self, half_calibration):
        again = calibrate_half_transmission(BARRIER_WIDTH, ENGINE_PACKET, ENGINE_GRID, tol=1e-3)
        assert again.height == half_calibration.height
        assert again.transmission == half_calibration.transmission
        assert again.samples == half_calibration.samples

    def test_loose_tolerance_needs_fewer_probes(self, half_calibration):
        loose = calibrate_half_transmission(BARRIER_WIDTH, ENGINE_PACKET, ENGINE_GRID, tol=0.1)
        assert len(loose.samples) < len(half_calibration.samples)
        assert abs(loose.transmission - 0.5) <= 0.1

    def test_tolerance_floor(self):
        with pytest.raises(ValueError, match="tol"):
            calibrate_half_transmission(BARRIER_WIDTH, ENGINE_PACKET, ENGINE_GRID, tol=1e-4)
