"""Scenario configuration: a flat key=value format with dotted sections.

One option per line (``grid.n = 1024`` or ``grid.n=512,512``), ``#`` comments
and blank lines ignored.  Parsing validates every line and reports all
problems at once; serialization echoes every field (defaults included) in a
canonical order so serialize(parse(text)) round-trips exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

KINDS = ("calibrate", "single_barrier", "pinball_unitary", "pinball_measured",
         "ensemble_stats")


class ConfigError(ValueError):
    """Carries every problem found in a config, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    grid_n: tuple[int, ...] = (512,)
    grid_length: tuple[float, ...] = (48.0,)
    packet_center: tuple[float, ...] = (-8.0,)
    packet_momentum: tuple[float, ...] = (10.0,)
    packet_sigma: tuple[float, ...] = (1.0,)
    barrier_width: float = 0.25
    barrier_height: float | None = None  # None -> calibrate on the fly
    calibrate_tol: float = 1e-3
    calibrate_target: float = 0.5
    geometry_levels: int = 3
    geometry_pitch: float = 16.0
    geometry_row_spacing: float = 10.0
    geometry_apex: tuple[float, ...] = (0.0, 0.0)
    geometry_window_half: float = 7.0
    geometry_window_edge: float = 0.35
    run_dt: float = 1e-3
    run_levels: int = 8
    run_duration: float = 3.2
    run_sample_every: int = 10
    run_eps_sep: float = 1e-4
    particles_q0: tuple[float, ...] = ()
    particles_pair_delta: float | None = None
    particles_count: int = 0
    particles_seed: int = 1234


def _parse_int(text: str) -> int:
    return int(text)


def _parse_float(text: str) -> float:
    return float(text)


def _parse_opt_float(text: str) -> float | None:
    return None if text.strip() == "" else float(text)


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _parse_float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _parse_kind(text: str) -> str:
    if text not in KINDS:
        raise ValueError(f"must be one of {', '.join(KINDS)}")
    return text


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (attribute, parser); declaration order is the canonical file order
KEY_SPECS = {
    "scenario.kind": ("kind", _parse_kind),
    "grid.n": ("grid_n", _parse_int_tuple),
    "grid.length": ("grid_length", _parse_float_tuple),
    "packet.center": ("packet_center", _parse_float_tuple),
    "packet.momentum": ("packet_momentum", _parse_float_tuple),
    "packet.sigma": ("packet_sigma", _parse_float_tuple),
    "barrier.width": ("barrier_width", _parse_float),
    "barrier.height": ("barrier_height", _parse_opt_float),
    "calibrate.tol": ("calibrate_tol", _parse_float),
    "calibrate.target": ("calibrate_target", _parse_float),
    "geometry.levels": ("geometry_levels", _parse_int),
    "geometry.pitch": ("geometry_pitch", _parse_float),
    "geometry.row_spacing": ("geometry_row_spacing", _parse_float),
    "geometry.apex": ("geometry_apex", _parse_float_tuple),
    "geometry.window_half": ("geometry_window_half", _parse_float),
    "geometry.window_edge": ("geometry_window_edge", _parse_float),
    "run.dt": ("run_dt", _parse_float),
    "run.levels": ("run_levels", _parse_int),
    "run.duration": ("run_duration", _parse_float),
    "run.sample_every": ("run_sample_every", _parse_int),
    "run.eps_sep": ("run_eps_sep", _parse_float),
    "particles.q0": ("particles_q0", _parse_float_tuple),
    "particles.pair_delta": ("particles_pair_delta", _parse_opt_float),
    "particles.count": ("particles_count", _parse_int),
    "particles.seed": ("particles_seed", _parse_int),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in KEY_SPECS.items()}


def _cross_validate(cfg: ScenarioConfig) -> list[str]:
    errors = []
    dims = len(cfg.grid_n)
    if dims not in (1, 2):
        errors.append("grid.n: need 1 or 2 axes")
    if len(cfg.grid_length) != dims:
        errors.append("grid.length: one entry per grid axis")
    for key, attr in (("packet.center", cfg.packet_center),
                      ("packet.momentum", cfg.packet_momentum),
                      ("packet.sigma", cfg.packet_sigma)):
        if len(attr) not in (1, dims):
            errors.append(f"{key}: needs 1 or {dims} components")
    if any(s <= 0 for s in cfg.packet_sigma):
        errors.append("packet.sigma: must be positive")
    if cfg.barrier_width <= 0:
        errors.append("barrier.width: must be positive")
    if cfg.barrier_height is not None and cfg.barrier_height < 0:
        errors.append("barrier.height: must be >= 0")
    if cfg.calibrate_tol < 1e-3:
        errors.append("calibrate.tol: below the 1e-3 calibration contract")
    if not 0.0 < cfg.calibrate_target < 1.0:
        errors.append("calibrate.target: must lie inside (0, 1)")
    if cfg.run_dt <= 0:
        errors.append("run.dt: must be positive")
    if not 1 <= cfg.run_levels <= 16:
        errors.append("run.levels: must be in 1..16")
    if cfg.run_duration <= 0:
        errors.append("run.duration: must be positive")
    if cfg.run_sample_every < 2 or cfg.run_sample_every % 2:
        errors.append("run.sample_every: must be an even integer >= 2")
    if cfg.run_eps_sep <= 0:
        errors.append("run.eps_sep: must be positive")
    if any(not 0.0 < q < 1.0 for q in cfg.particles_q0):
        errors.append("particles.q0: seeds must lie inside (0, 1)")
    if cfg.particles_pair_delta is not None and not 0.0 < cfg.particles_pair_delta < 0.5:
        errors.append("particles.pair_delta: must lie inside (0, 0.5)")
    if cfg.particles_count < 0:
        errors.append("particles.count: must be >= 0")
    if len(cfg.geometry_apex) != 2:
        errors.append("geometry.apex: needs two components")

    kind = cfg.kind
    if kind in ("calibrate", "single_barrier", "pinball_measured", "ensemble_stats"):
        if dims != 1:
            errors.append(f"scenario {kind}: needs a 1D grid")
    if kind == "pinball_unitary" and dims != 2:
        errors.append("scenario pinball_unitary: needs a 2D grid")
    if kind == "single_barrier" and cfg.particles_count < 1:
        errors.append("scenario single_barrier: particles.count must be >= 1")
    if kind == "ensemble_stats" and cfg.particles_count < 1:
        errors.append("scenario ensemble_stats: particles.count must be >= 1")
    if kind == "pinball_measured" and not cfg.particles_q0 and cfg.particles_count < 1:
        errors.append("scenario pinball_measured: give particles.q0 or particles.count")
    return errors


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate; raises ConfigError listing every problem."""
    errors: list[str] = []
    seen: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key = value")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KEY_SPECS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        seen[key] = value
    if "scenario.kind" not in seen and not any("scenario.kind" in e for e in errors):
        errors.append("missing required key 'scenario.kind'")

    values = {}
    for key, value in seen.items():
        attr, parser = KEY_SPECS[key]
        try:
            values[attr] = parser(value)
        except ValueError as exc:
            reason = str(exc) or f"cannot parse {value!r}"
            errors.append(f"{key}: {reason}")
    if "kind" not in values:
        raise ConfigError(errors)

    cfg = ScenarioConfig(**values)
    errors.extend(_cross_validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def serialize_config(cfg: ScenarioConfig) -> str:
    """Canonical text with every field echoed; round-trips through parse."""
    lines = []
    for field in fields(ScenarioConfig):
        key = _ATTR_TO_KEY[field.name]
        lines.append(f"{key} = {_fmt(getattr(cfg, field.name))}")
    return "\n".join(lines) + "\n"


def config_digest(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def with_defaults_for(cfg: ScenarioConfig) -> ScenarioConfig:
    """Fill dimension-dependent defaults (broadcast packet tuples to 2D)."""
    dims = len(cfg.grid_n)
    updates = {}
    for name in ("packet_center", "packet_momentum", "packet_sigma"):
        value = getattr(cfg, name)
        if dims == 2 and len(value) == 1:
            updates[name] = (value[0], value[0])
    return replace(cfg, **updates) if updates else cfg
