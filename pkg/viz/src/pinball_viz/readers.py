"""Readers for the simulator's documented output formats."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class NoDataError(ValueError):
    """File is well-formed but holds no rows to plot."""


class FormatError(ValueError):
    """File does not follow its documented layout."""


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text().splitlines()
    rows = []
    header: list[str] = []
    for raw in lines:
        if not raw or raw.startswith("#"):
            continue
        cells = raw.split(",")
        if not header:
            header = cells
        else:
            rows.append(cells)
    if not header:
        raise FormatError(f"{path}: missing header row")
    return header, rows


def read_trajectories(path) -> dict[int, dict[str, np.ndarray]]:
    """Parse a trajectory table: t, x, y (may be empty), trajectory_id."""
    header, rows = _read_rows(path)
    if header != ["t", "x", "y", "trajectory_id"]:
        raise FormatError(f"{path}: unexpected header {header!r}")
    if not rows:
        raise NoDataError(f"{path}: no trajectory samples")
    out: dict[int, dict[str, list]] = {}
    for cells in rows:
        if len(cells) != 4:
            raise FormatError(f"{path}: row with {len(cells)} cells")
        try:
            t = float(cells[0])
            x = float(cells[1])
            y = float(cells[2]) if cells[2] != "" else None
            tid = int(cells[3])
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        tr = out.setdefault(tid, {"t": [], "x": [], "y": []})
        tr["t"].append(t)
        tr["x"].append(x)
        tr["y"].append(y)
    parsed = {}
    for tid, tr in out.items():
        has_y = all(v is not None for v in tr["y"])
        parsed[tid] = {
            "t": np.asarray(tr["t"]),
            "x": np.asarray(tr["x"]),
            "y": np.asarray(tr["y"], dtype=float) if has_y else None,
        }
    return parsed


def read_divergence(path) -> dict[str, np.ndarray]:
    """Parse a divergence report: level, q_a, q_b, dq, bit_a, bit_b, hamming."""
    header, rows = _read_rows(path)
    expected = ["level", "q_a", "q_b", "dq", "bit_a", "bit_b", "hamming"]
    if header != expected:
        raise FormatError(f"{path}: unexpected header {header!r}")
    if not rows:
        raise NoDataError(f"{path}: no divergence rows")
    try:
        cols = np.asarray([[float(c) for c in row] for row in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return {name: cols[:, i] for i, name in enumerate(expected)}


def read_records(path) -> list[dict]:
    """Parse run records: run_id, q0, bits, final_node, q_0..q_{n-1}."""
    header, rows = _read_rows(path)
    if header[:4] != ["run_id", "q0", "bits", "final_node"]:
        raise FormatError(f"{path}: unexpected header {header!r}")
    if not rows:
        raise NoDataError(f"{path}: no run records")
    q_cols = header[4:]
    records = []
    for cells in rows:
        try:
            records.append({
                "run_id": int(cells[0]),
                "q0": float(cells[1]),
                "bits": cells[2],
                "final_node": int(cells[3]),
                "q": np.asarray([float(v) for v in cells[4:4 + len(q_cols)]]),
            })
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}: {exc}") from exc
    return records


# BPWF field snapshot: 64-byte little-endian header
#   "BPWF" | uint32 dims | uint32 n0 | uint32 n1 | float64 len0 | float64 len1
#   | float64 time | zero pad; then row-major float64 re/im pairs.
_HEADER = struct.Struct("<4s3I3d")


def read_field(path):
    """Load a BPWF snapshot; returns (axes, complex field, time)."""
    raw = Path(path).read_bytes()
    if len(raw) < 64 or raw[:4] != b"BPWF":
        raise FormatError(f"{path}: not a BPWF snapshot")
    _, dims, n0, n1, l0, l1, time = _HEADER.unpack(raw[: _HEADER.size])
    shape = (n0,) if dims == 1 else (n0, n1)
    count = int(np.prod(shape)) * 2
    flat = np.frombuffer(raw[64:], dtype="<f8", count=count)
    data = (flat[0::2] + 1j * flat[1::2]).reshape(shape)
    axes = [-l0 / 2 + (l0 / n0) * np.arange(n0)]
    if dims == 2:
        axes.append(-l1 / 2 + (l1 / n1) * np.arange(n1))
    return axes, data, time
