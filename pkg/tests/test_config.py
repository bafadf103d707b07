"""Config parsing, validation, and round-tripping."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinball.config import (
    ConfigError,
    ScenarioConfig,
    config_digest,
    parse_config,
    serialize_config,
    with_defaults_for,
)

MINIMAL_CALIBRATE = """
scenario.kind = calibrate
grid.n = 1024
grid.length = 64
"""


class TestParse:
    def test_minimal_with_defaults(self):
        cfg = parse_config(MINIMAL_CALIBRATE)
        assert cfg.kind == "calibrate"
        assert cfg.grid_n == (1024,)
        assert cfg.barrier_width == 0.25
        assert cfg.calibrate_tol == 1e-3
        # defaults are echoed on serialization
        assert "run.dt = 0.001" in serialize_config(cfg)

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# a comment\n\nscenario.kind = calibrate\n  \n")
        assert cfg.kind == "calibrate"

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as err:
            parse_config("scenario.kind = calibrate\nbogus.key = 3\n")
        assert any("bogus.key" in e for e in err.value.errors)

    def test_negative_sigma_names_field_and_constraint(self):
        with pytest.raises(ConfigError) as err:
            parse_config("scenario.kind = calibrate\npacket.sigma = -1\n")
        assert any("packet.sigma" in e and "positive" in e for e in err.value.errors)

    def test_all_errors_collected(self):
        bad = ("scenario.kind = calibrate\n"
               "packet.sigma = -1\n"
               "run.dt = 0\n"
               "nonsense = 1\n")
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        assert len(err.value.errors) == 3

    def test_duplicate_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config("scenario.kind = calibrate\ngrid.n = 512\ngrid.n = 1024\n")
        assert any("duplicate" in e for e in err.value.errors)

    def test_kind_required(self):
        with pytest.raises(ConfigError) as err:
            parse_config("grid.n = 512\n")
        assert any("scenario.kind" in e for e in err.value.errors)

    def test_kind_dimension_rules(self):
        with pytest.raises(ConfigError) as err:
            parse_config("scenario.kind = pinball_unitary\ngrid.n = 512\n")
        assert any("2D" in e for e in err.value.errors)
        with pytest.raises(ConfigError) as err:
            parse_config("scenario.kind = calibrate\ngrid.n = 512,512\n"
                         "grid.length = 48,48\n")
        assert any("1D" in e for e in err.value.errors)

    def test_measured_needs_seeds(self):
        with pytest.raises(ConfigError) as err:
            parse_config("scenario.kind = pinball_measured\n")
        assert any("particles.q0" in e for e in err.value.errors)

    def test_levels_range(self):
        with pytest.raises(ConfigError) as err:
            parse_config("scenario.kind = pinball_measured\nparticles.q0 = 0.3\n"
                         "run.levels = 20\n")
        assert any("run.levels" in e for e in err.value.errors)


class TestRoundTrip:
    def test_explicit_round_trip(self):
        text = ("scenario.kind = pinball_measured\n"
                "grid.n = 512\ngrid.length = 48\n"
                "particles.q0 = 0.3,0.7\n"
                "particles.pair_delta = 0.0009765625\n"
                "run.levels = 12\n")
        cfg = parse_config(text)
        assert parse_config(serialize_config(cfg)) == cfg
        assert config_digest(cfg) == config_digest(parse_config(serialize_config(cfg)))

    @given(
        kind=st.sampled_from(["calibrate", "single_barrier", "pinball_measured",
                              "ensemble_stats"]),
        n=st.sampled_from([64, 128, 512, 1024]),
        length=st.floats(16.0, 128.0),
        sigma=st.floats(0.25, 4.0),
        momentum=st.floats(2.0, 40.0),
        dt=st.floats(1e-4, 1e-2),
        levels=st.integers(1, 16),
        count=st.integers(1, 500),
        seed=st.integers(0, 2 ** 31),
        q0=st.lists(st.floats(0.01, 0.99), min_size=1, max_size=4),
    )
    @settings(max_examples=60, deadline=None)
    def test_generated_round_trip(self, kind, n, length, sigma, momentum, dt,
                                  levels, count, seed, q0):
        cfg = ScenarioConfig(
            kind=kind, grid_n=(n,), grid_length=(length,),
            packet_sigma=(sigma,), packet_momentum=(momentum,),
            run_dt=dt, run_levels=levels, particles_count=count,
            particles_seed=seed, particles_q0=tuple(q0),
        )
        assert parse_config(serialize_config(cfg)) == cfg


def test_defaults_broadcast_to_2d():
    cfg = parse_config("scenario.kind = pinball_unitary\ngrid.n = 512,512\n"
                       "grid.length = 48,48\nparticles.q0 = 0.3\n")
    full = with_defaults_for(cfg)
    assert full.packet_momentum == (10.0, 10.0)
    assert full.packet_sigma == (1.0, 1.0)
