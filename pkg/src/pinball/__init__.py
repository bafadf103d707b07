"""Quantum pinball: wavepacket scattering through a half-transmitting barrier
lattice, guidance-condition trajectories, and a detector/collapse model whose
repeated measurements turn the in-packet coordinate into the doubling map."""

__version__ = "0.1.0"
