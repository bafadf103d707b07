import pytest

from pinball.geometry import calibrate_half_transmission
from pinball.wavefield import Grid, PacketSpec

# canonical 1D scattering bench used across the suite
ENGINE_GRID = Grid((1024,), (64.0,))
ENGINE_PACKET = PacketSpec(-8.0, 10.0, 1.0)
BARRIER_WIDTH = 0.25


@pytest.fixture(scope="session")
def half_calibration():
    """Barrier height tuned to T = 1/2 for the canonical packet (run once)."""
    return calibrate_half_transmission(BARRIER_WIDTH, ENGINE_PACKET, ENGINE_GRID, tol=1e-3)
