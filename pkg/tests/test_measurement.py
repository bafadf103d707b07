"""Detector records, collapse semantics, and both pinball engines."""

import numpy as np
import pytest

from pinball.bohm import sample_ensemble
from pinball.geometry import (
    Barrier,
    PinballGeometry,
    Region,
    bump_potential,
    calibrate_half_transmission,
)
from pinball.measurement import (
    Branch,
    DetectorRecord,
    MeasuredRun,
    ParticleInGapError,
    PrematureDetectionError,
    detect_and_collapse,
    run_measured_pinball,
    run_unitary_pinball,
    separation_overlap,
)
from pinball.wavefield import Grid, PacketSpec, SplitStepper, Wavefunction, gaussian_packet

from conftest import ENGINE_GRID, ENGINE_PACKET


@pytest.fixture(scope="module")
def split_state(half_calibration):
    """Calibrated 50/50 post-scattering state with well-separated lobes."""
    psi = gaussian_packet(ENGINE_GRID, ENGINE_PACKET)
    v = bump_potential(half_calibration.barrier, ENGINE_GRID)
    return SplitStepper(ENGINE_GRID, v, 1e-3).run(psi, 1500)


@pytest.fixture(scope="module")
def detector_regions():
    gap = 0.5  # 2 barrier widths
    return (Region((-32.0,), (-gap,)), Region((gap,), (32.0,)))


@pytest.fixture(scope="module")
def lattice(half_calibration):
    return PinballGeometry(levels=3, pitch=16.0, row_spacing=8.0,
                           barrier=half_calibration.barrier)


class TestRecordAndBranch:
    def test_record_extension(self):
        rec = DetectorRecord()
        rec2 = rec.extended(1).extended(0).extended(1)
        assert rec2.bits == (1, 0, 1)
        assert str(rec2) == "101"
        assert len(rec) == 0  # original untouched

    def test_branch_validation(self):
        psi = gaussian_packet(ENGINE_GRID, ENGINE_PACKET)
        with pytest.raises(ValueError, match="weight"):
            Branch(psi, DetectorRecord(), 0.0)
        bad = Wavefunction(ENGINE_GRID, psi.data * 2.0)
        with pytest.raises(ValueError, match="norm"):
            Branch(bad, DetectorRecord(), 1.0)


class TestSeparationOverlap:
    def test_single_packet_in_one_region(self, detector_regions):
        region_r, region_t = detector_regions
        psi = gaussian_packet(ENGINE_GRID, PacketSpec(8.0, 10.0, 1.0))
        mass_r, mass_t, residual = separation_overlap(psi, region_r, region_t)
        assert mass_r < 1e-10
        assert mass_t == pytest.approx(1.0, abs=1e-10)
        assert abs(residual) < 1e-10

    def test_split_state_half_half(self, split_state, detector_regions):
        mass_r, mass_t, residual = separation_overlap(split_state, *detector_regions)
        assert mass_r == pytest.approx(0.5, abs=0.01)
        assert mass_t == pytest.approx(0.5, abs=0.01)
        assert residual < 1e-4

    def test_overlapping_lobes_keep_residual(self, detector_regions):
        g = ENGINE_GRID
        x = g.axis(0)
        two = (np.exp(-((x + 0.5) ** 2) / 4) + np.exp(-((x - 0.5) ** 2) / 4)) * np.exp(1j * 10 * x)
        two /= np.sqrt(np.sum(np.abs(two) ** 2) * g.cell_volume)
        psi = Wavefunction(g, two)
        _, _, residual = separation_overlap(psi, *detector_regions)
        assert residual > 1e-4  # detection must refuse

    def test_overlapping_regions_rejected(self, split_state):
        with pytest.raises(ValueError, match="overlap"):
            separation_overlap(split_state, Region((-1.0,), (1.0,)), Region((0.0,), (2.0,)))


class TestDetectAndCollapse:
    def test_transmitted_particle(self, split_state, detector_regions):
        branch = Branch(split_state)
        out, bit = detect_and_collapse(branch, (5.0,), *detector_regions)
        assert bit == 1
        assert abs(out.psi.norm - 1.0) < 1e-10
        assert out.weight == pytest.approx(0.5, rel=0.01)
        assert out.record.bits == (1,)

    def test_reflected_particle_purges_other_region(self, split_state, detector_regions):
        region_r, region_t = detector_regions
        out, bit = detect_and_collapse(Branch(split_state), (-5.0,), region_r, region_t)
        assert bit == 0
        rho = out.psi.density()
        mass_t = float(np.sum(rho[region_t.mask(ENGINE_GRID)]) * ENGINE_GRID.cell_volume)
        assert mass_t == 0.0  # discarded branch is gone, not just small

    def test_particle_in_gap(self, split_state, detector_regions):
        with pytest.raises(ParticleInGapError):
            detect_and_collapse(Branch(split_state), (0.0,), *detector_regions)

    def test_premature_detection(self, half_calibration, detector_regions):
        psi = gaussian_packet(ENGINE_GRID, ENGINE_PACKET)
        v = bump_potential(half_calibration.barrier, ENGINE_GRID)
        early = SplitStepper(ENGINE_GRID, v, 1e-3).run(psi, 900)  # lobes still forming
        with pytest.raises(PrematureDetectionError):
            detect_and_collapse(Branch(early), (-5.0,), *detector_regions)

    def test_branch_fraction_binomial(self, split_state, detector_regions):
        # 10^4 samples of the split state: fraction on the transmitted side
        # matches the branch mass within 3 binomial sigma
        pts = sample_ensemble(split_state, 10_000, rng_seed=42)
        frac = float(np.mean(pts[:, 0] > 0.0))
        assert frac == pytest.approx(0.5, abs=0.015)


class TestMeasuredPinball:
    def test_quarter_seed_two_levels(self, lattice):
        run = run_measured_pinball(lattice, ENGINE_PACKET, 0.25, 2)
        assert run.bits[0] == 1
        assert run.q_values[0] == pytest.approx(0.25, abs=1e-3)
        assert run.q_values[1] == pytest.approx(0.5, abs=0.02)
        assert run.weight == pytest.approx(0.25, rel=0.1)

    def test_determinism(self, lattice):
        a = run_measured_pinball(lattice, ENGINE_PACKET, 0.37, 5)
        b = run_measured_pinball(lattice, ENGINE_PACKET, 0.37, 5)
        assert a.record == b.record
        assert a.q_values == b.q_values
        assert a.trajectory.positions == b.trajectory.positions

    def test_weight_is_product_of_masses(self, lattice):
        run = run_measured_pinball(lattice, ENGINE_PACKET, 0.37, 4)
        assert run.weight == pytest.approx(0.5 ** 4, rel=0.05)

    def test_record_matches_trajectory_direction(self, lattice):
        # bit k equals the sign of the lab displacement right after collapse k
        run = run_measured_pinball(lattice, ENGINE_PACKET, 0.337, 5)
        times = np.array(run.trajectory.times)
        xs = np.array([p[0] for p in run.trajectory.positions])
        for k, t_k in enumerate(run.collapse_times[:-1]):
            seg = (times > t_k) & (times <= t_k + 0.4)
            assert seg.sum() >= 2
            dx = xs[seg][-1] - xs[seg][0]
            assert (dx > 0) == bool(run.bits[k]), f"level {k}"

    def test_events_recorded(self, lattice):
        run = run_measured_pinball(lattice, ENGINE_PACKET, 0.3, 3)
        assert len(run.trajectory.events) == 3
        ev = run.trajectory.events[0]
        assert ev.level == 0
        assert ev.branch == "T"
        assert ev.q_after == pytest.approx(0.6, abs=0.02)
        assert run.nodes == [1, 1, 2]  # bits 101

    def test_validation(self, lattice):
        with pytest.raises(ValueError, match="levels"):
            run_measured_pinball(lattice, ENGINE_PACKET, 0.3, 17)
        with pytest.raises(ValueError, match="particle_q0"):
            run_measured_pinball(lattice, ENGINE_PACKET, 1.5, 3)
        uncal = PinballGeometry(levels=3, pitch=16.0, row_spacing=8.0,
                                barrier=Barrier(0.0, 0.0, 0.25))
        with pytest.raises(ValueError, match="calibrated"):
            run_measured_pinball(uncal, ENGINE_PACKET, 0.3, 3)
        with pytest.raises(ValueError, match="8 sigma"):
            run_measured_pinball(lattice, PacketSpec(-3.0, 10.0, 1.0), 0.3, 3)


@pytest.fixture(scope="module")
def quick_geometry():
    # coarse single-row lattice for the reduction check
    packet = PacketSpec(-8.0, 10.0, 1.0)
    grid = Grid((512,), (64.0,))
    cal = calibrate_half_transmission(0.4, packet, grid, tol=0.01)
    return PinballGeometry(levels=1, pitch=16.0, row_spacing=8.0, barrier=cal.barrier)


@pytest.mark.slow
class TestUnitaryPinball:
    def test_single_row_reproduces_front_half_rule(self, quick_geometry):
        grid = Grid((512, 256), (48.0, 32.0))
        packet = PacketSpec((-8.0, -8.0), (10.0, 10.0), (1.0, 1.0))
        psi0 = gaussian_packet(grid, packet)
        starts = sample_ensemble(psi0, 24, rng_seed=9)
        run = run_unitary_pinball(quick_geometry, packet, starts, 1.4, grid=grid)
        assert run.capped == 0
        rho0 = np.sum(psi0.density(), axis=1) * grid.spacing[1]
        from pinball.bohm import mass_ahead
        for i in range(starts.shape[0]):
            q0 = mass_ahead(grid, 0, rho0, starts[i, 0], 1)
            if abs(q0 - 0.5) < 0.06:
                continue  # knife-edge band
            transmitted = run.positions[i, 0] > 0.0
            assert transmitted == (q0 < 0.5), f"particle {i}: q0={q0:.3f}"

    def test_level_limit(self, quick_geometry):
        geom = PinballGeometry(levels=4, pitch=16.0, row_spacing=8.0,
                               barrier=quick_geometry.barrier)
        with pytest.raises(ValueError, match="3 rows"):
            run_unitary_pinball(geom, PacketSpec((-8, -8), (10, 10), (1, 1)),
                                [[0.0, 0.0]], 1.0, grid=Grid((512, 256), (48.0, 32.0)))
