import pytest

from arim.config import (
    dump_kv,
    experiment_from_kv,
    experiment_to_kv,
    load_experiment_config,
    parse_kv_text,
)
from arim.errors import ConfigError, PersistenceError


def test_builtin_desk_matches_published_scale():
    exp = load_experiment_config("desk")
    assert exp.radar.samples_per_chirp == 256
    assert exp.stft.n_fft == 512
    assert exp.stft.frame_count(256) == 29
    # same chirp slope as the full-scale sensor
    full = load_experiment_config("paper")
    assert exp.radar.chirp_slope == pytest.approx(full.radar.chirp_slope)


def test_builtin_paper_matches_tables():
    exp = load_experiment_config("paper")
    r = exp.radar
    assert (r.bandwidth_hz, r.chirp_time_s, r.sample_rate_hz, r.carrier_hz) == (
        1.6e9, 25.6e-6, 40e6, 78e9
    )
    g = exp.generation
    assert (g.interferers_min, g.interferers_max, g.interferers_step) == (1, 3, 1)
    assert (g.snr_db_min, g.snr_db_max, g.snr_db_step) == (5.0, 40.0, 5.0)
    assert (g.sir_db_min, g.sir_db_max) == (-5.0, 40.0)
    assert (g.slope_ratio_min, g.slope_ratio_max) == (0.0, 1.5)
    assert (g.targets_min, g.targets_max) == (1, 4)
    assert (g.amplitude_min, g.amplitude_max) == (0.01, 1.0)
    assert (g.distance_m_min, g.distance_m_max) == (2.0, 95.0)
    assert exp.stft.frame_count(1024) == 154


def test_parse_kv_rejects_malformed():
    with pytest.raises(ConfigError):
        parse_kv_text("only a key line")
    with pytest.raises(ConfigError):
        parse_kv_text("a = 1\na = 2")
    with pytest.raises(ConfigError):
        parse_kv_text("a =")
    kv = parse_kv_text("# comment\n\n a = 1 # trailing\n")
    assert kv == {"a": "1"}


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        experiment_from_kv({"not_a_key": "1"})


def test_kv_roundtrip():
    exp = load_experiment_config("desk")
    kv = experiment_to_kv(exp)
    again = experiment_from_kv(parse_kv_text(dump_kv(kv)))
    assert again == exp


def test_config_file_path_and_missing(tmp_path):
    path = tmp_path / "mine.cfg"
    path.write_text("bandwidth_hz = 800e6\nchirp_time_s = 12.8e-6\n")
    exp = load_experiment_config(str(path))
    assert exp.radar.bandwidth_hz == 800e6
    assert exp.radar.sample_rate_hz == 40e6  # defaults fill the rest
    with pytest.raises(PersistenceError):
        load_experiment_config(str(tmp_path / "missing.cfg"))
