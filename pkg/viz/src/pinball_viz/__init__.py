"""Post-processing plots for pinball simulation outputs.

Pure readers of the documented CSV and BPWF file contracts; the simulator
itself is never imported and its output directories are never written to.
"""

__version__ = "0.1.0"
