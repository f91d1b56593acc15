import math

import numpy as np
import pytest

from arim.errors import ConfigError, DomainError
from arim.radar import (
    GenerationConfig,
    InterferenceSpec,
    RadarConfig,
    SPEED_OF_LIGHT,
    TargetSpec,
    add_noise,
    beat_frequency,
    interference_gate_mask,
    sample_scenario,
    synth_clean_beat,
    synth_interference,
)


def test_radar_config_requires_integer_chirp_samples():
    with pytest.raises(ConfigError):
        RadarConfig(bandwidth_hz=1e9, chirp_time_s=25.3e-6, sample_rate_hz=40e6 + 7,
                    carrier_hz=78e9)
    cfg = RadarConfig(bandwidth_hz=1.6e9, chirp_time_s=25.6e-6, sample_rate_hz=40e6,
                      carrier_hz=78e9)
    assert cfg.samples_per_chirp == 1024


def test_beat_frequency_rejects_nonpositive_distance(table_radar):
    for bad in (0.0, -3.0):
        with pytest.raises(DomainError):
            beat_frequency(bad, table_radar)


def test_beat_frequency_table_values(table_radar):
    # direct arithmetic, independent of the implementation
    expected_95 = 2.0 * 1.6e9 * 95.0 / (SPEED_OF_LIGHT * 25.6e-6)
    fb95 = beat_frequency(95.0, table_radar)
    assert fb95 == pytest.approx(expected_95, rel=1e-12)
    assert fb95 < table_radar.sample_rate_hz  # alias-free at the far edge
    assert fb95 == pytest.approx(39.58e6, rel=2e-3)  # rounded-c figure

    fb50 = beat_frequency(50.0, table_radar)
    assert round(fb50 / table_radar.sample_rate_hz * 2048) == 1067


def test_single_target_peak_lands_on_bin_1067(table_radar):
    sig = synth_clean_beat([TargetSpec(distance_m=50.0, amplitude=1.0, phase_rad=0.0)],
                           table_radar)
    spectrum = np.abs(np.fft.fft(sig, 2048))
    assert int(np.argmax(spectrum)) == 1067


def test_alias_free_across_generation_range(table_radar):
    for d in np.linspace(2.0, 95.0, 200):
        assert beat_frequency(float(d), table_radar) < table_radar.sample_rate_hz


def test_synth_clean_rejects_empty_and_aliasing(table_radar):
    with pytest.raises(DomainError):
        synth_clean_beat([], table_radar)
    with pytest.raises(DomainError):
        synth_clean_beat([TargetSpec(distance_m=120.0, amplitude=1.0, phase_rad=0.0)],
                         table_radar)


def test_destructive_interference_cancels(table_radar):
    targets = [
        TargetSpec(distance_m=30.0, amplitude=0.5, phase_rad=0.0),
        TargetSpec(distance_m=30.0, amplitude=0.5, phase_rad=np.pi),
    ]
    sig = synth_clean_beat(targets, table_radar)
    assert np.abs(sig).max() < 1e-12


def test_single_target_power_is_amplitude_squared(table_radar):
    sig = synth_clean_beat([TargetSpec(distance_m=40.0, amplitude=0.35, phase_rad=1.2)],
                           table_radar)
    assert np.mean(np.abs(sig) ** 2) == pytest.approx(0.35 ** 2, rel=1e-12)


def test_synthesis_is_linear_in_targets(table_radar, rng):
    group_a = [TargetSpec(float(rng.uniform(2, 95)), float(rng.uniform(0.01, 1)),
                          float(rng.uniform(-np.pi, np.pi))) for _ in range(2)]
    group_b = [TargetSpec(float(rng.uniform(2, 95)), float(rng.uniform(0.01, 1)),
                          float(rng.uniform(-np.pi, np.pi))) for _ in range(3)]
    combined = synth_clean_beat(group_a + group_b, table_radar)
    separate = synth_clean_beat(group_a, table_radar) + synth_clean_beat(group_b, table_radar)
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_interference_empty_list_is_zero(table_radar):
    out = synth_interference([], 1.0, table_radar)
    assert out.shape == (1024,)
    assert not out.any()


def test_interference_requires_positive_ref_power(table_radar):
    itf = InterferenceSpec(slope_ratio=0.5, sir_db=0.0, center_time_s=1e-5, phase_rad=0.0)
    with pytest.raises(DomainError):
        synth_interference([itf], 0.0, table_radar)


def test_coherent_slope_covers_whole_chirp(table_radar):
    itf = InterferenceSpec(slope_ratio=1.0, sir_db=7.0, center_time_s=10e-6, phase_rad=0.3)
    out = synth_interference([itf], 1.0, table_radar)
    mags = np.abs(out)
    assert np.all(mags > 0)
    assert mags.max() - mags.min() < 1e-12  # constant modulus
    measured_sir = 10 * np.log10(1.0 / np.mean(mags ** 2))
    assert measured_sir == pytest.approx(7.0, abs=1e-6)


def test_gate_matches_bruteforce_scan(table_radar):
    cfg = table_radar
    itf = InterferenceSpec(slope_ratio=0.5, sir_db=5.0,
                           center_time_s=cfg.chirp_time_s / 2, phase_rad=0.0)
    out = synth_interference([itf], 1.0, cfg)
    t = cfg.time_axis()
    dalpha = cfg.chirp_slope * (1 - itf.slope_ratio)
    # per-sample oracle for the anti-aliasing gate condition
    gate = np.array([abs(dalpha * (ti - itf.center_time_s)) <= cfg.sample_rate_hz / 2
                     for ti in t])
    np.testing.assert_array_equal(out != 0, gate)
    np.testing.assert_array_equal(interference_gate_mask(itf, cfg), gate)
    # nominal width fs^2/dalpha in samples, within rounding of the scan
    expected = cfg.sample_rate_hz ** 2 / dalpha
    assert abs(gate.sum() - expected) <= 1.0


def test_sir_calibration_exact_for_random_interferers(table_radar, rng):
    for _ in range(25):
        itf = InterferenceSpec(
            slope_ratio=float(rng.uniform(0, 1.5)),
            sir_db=float(rng.uniform(-5, 40)),
            center_time_s=float(rng.uniform(0, table_radar.chirp_time_s)),
            phase_rad=float(rng.uniform(-np.pi, np.pi)),
        )
        ref_power = float(rng.uniform(0.1, 2.0))
        out = synth_interference([itf], ref_power, table_radar)
        measured = 10 * np.log10(ref_power / np.mean(np.abs(out) ** 2))
        assert measured == pytest.approx(itf.sir_db, abs=1e-6)


def test_noise_disabled_sentinel_returns_input(table_radar, rng):
    sig = synth_clean_beat([TargetSpec(20.0, 0.7, 0.1)], table_radar)
    out = add_noise(sig, math.inf, 1.0, rng)
    np.testing.assert_array_equal(out, sig)


def test_noise_power_calibration():
    # Monte-Carlo estimate over 1e6 samples: variance within 1% of 0.01
    rng = np.random.default_rng(99)
    sig = np.zeros(1_000_000, dtype=complex)
    noisy = add_noise(sig, 20.0, 1.0, rng)
    power = np.mean(np.abs(noisy) ** 2)
    assert abs(power - 0.01) < 0.0001


def test_noise_is_deterministic_per_seed(table_radar):
    sig = synth_clean_beat([TargetSpec(20.0, 0.7, 0.1)], table_radar)
    a = add_noise(sig, 10.0, 1.0, np.random.default_rng(5))
    b = add_noise(sig, 10.0, 1.0, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_generation_config_validates_ranges(table_radar):
    with pytest.raises(ConfigError):
        GenerationConfig(radar=table_radar, snr_db_min=50, snr_db_max=40)
    with pytest.raises(ConfigError):
        GenerationConfig(radar=table_radar, distance_m_max=200.0)  # aliases
    with pytest.raises(ConfigError):
        GenerationConfig(radar=table_radar, targets_min=0, targets_max=0)


def test_sample_scenario_respects_ranges(full_generation):
    snr_seen = set()
    nint_seen = set()
    for i in range(400):
        s = sample_scenario(full_generation, np.random.default_rng(1000 + i))
        snr_seen.add(s.snr_db)
        nint_seen.add(s.n_interferers)
        assert 1 <= len(s.targets) <= 4
        for t in s.targets:
            assert 0.01 <= t.amplitude <= 1.0
            assert 2.0 <= t.distance_m <= 95.0
            assert -np.pi <= t.phase_rad < np.pi
        for itf in s.interferers:
            assert 0.0 <= itf.slope_ratio <= 1.5
            assert -5.0 <= itf.sir_db <= 40.0
            assert 0.0 <= itf.center_time_s <= full_generation.radar.chirp_time_s
    assert snr_seen <= {5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0}
    assert nint_seen == {1, 2, 3}


def test_sample_scenario_deterministic(full_generation):
    a = sample_scenario(full_generation, np.random.default_rng(77))
    b = sample_scenario(full_generation, np.random.default_rng(77))
    assert a == b


def test_degenerate_scenario_equals_clean(table_radar):
    gen = GenerationConfig(radar=table_radar, interferers_min=0, interferers_max=0,
                           noise_enabled=False)
    s = sample_scenario(gen, np.random.default_rng(3))
    np.testing.assert_array_equal(s.interfered_signal, s.clean_signal)
    assert math.isinf(s.snr_db)


def test_interferer_count_override():
    gen = GenerationConfig(radar=RadarConfig(1.6e9, 25.6e-6, 40e6, 78e9))
    ood = gen.with_interferer_counts([4, 5, 6])
    assert list(ood.interferer_choices) == [4, 5, 6]
    with pytest.raises(ConfigError):
        gen.with_interferer_counts([1, 2, 4])  # not a uniform step
