"""Synthesis of clean and interference-corrupted FMCW beat signals.

A chirp-sequence radar mixes the received echo with the transmitted chirp;
each point target then appears as a complex exponential whose frequency is
proportional to its distance.  An uncorrelated interferer (different chirp
slope) turns into a linear-chirp burst whose support is limited by the
anti-aliasing filter.  All functions here are pure and deterministic given
their inputs; randomness enters only through explicit numpy Generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact


@dataclass(frozen=True)
class RadarConfig:
    """Fixed sensor parameters of the simulated radar."""

    bandwidth_hz: float
    chirp_time_s: float
    sample_rate_hz: float
    carrier_hz: float

    def __post_init__(self):
        for name in ("bandwidth_hz", "chirp_time_s", "sample_rate_hz", "carrier_hz"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"RadarConfig.{name} must be positive")
        n = self.chirp_time_s * self.sample_rate_hz
        if abs(n - round(n)) > 1e-6 or round(n) < 1:
            raise ConfigError(
                f"chirp_time_s * sample_rate_hz must be a positive integer, got {n}"
            )

    @property
    def samples_per_chirp(self) -> int:
        return int(round(self.chirp_time_s * self.sample_rate_hz))

    @property
    def chirp_slope(self) -> float:
        """Sweep slope in Hz/s."""
        return self.bandwidth_hz / self.chirp_time_s

    def time_axis(self) -> np.ndarray:
        return np.arange(self.samples_per_chirp) / self.sample_rate_hz


@dataclass(frozen=True)
class TargetSpec:
    """One point target: distance plus complex amplitude (magnitude, phase)."""

    distance_m: float
    amplitude: float
    phase_rad: float


@dataclass(frozen=True)
class InterferenceSpec:
    """One uncorrelated chirp interferer as seen after mixing.

    slope_ratio is interferer slope / victim slope; 1 means a coherent-slope
    interferer whose beat stays at a constant frequency for the whole chirp.
    center_time_s is the instant at which the interferer's beat frequency
    crosses zero.  sir_db is referenced to the strongest target's power and
    averaged over the full chirp.
    """

    slope_ratio: float
    sir_db: float
    center_time_s: float
    phase_rad: float


@dataclass
class ScenarioSample:
    """One generated measurement with its ground truth."""

    clean_signal: np.ndarray
    interfered_signal: np.ndarray
    targets: list[TargetSpec]
    interferers: list[InterferenceSpec]
    snr_db: float

    def __eq__(self, other):
        if not isinstance(other, ScenarioSample):
            return NotImplemented
        return (
            np.array_equal(self.clean_signal, other.clean_signal)
            and np.array_equal(self.interfered_signal, other.interfered_signal)
            and self.targets == other.targets
            and self.interferers == other.interferers
            and (self.snr_db == other.snr_db
                 or (math.isinf(self.snr_db) and math.isinf(other.snr_db)))
        )

    @property
    def n_interferers(self) -> int:
        return len(self.interferers)


def beat_frequency(distance_m: float, cfg: RadarConfig) -> float:
    """Beat frequency of a target at the given distance, in Hz."""
    if not distance_m > 0:
        raise DomainError(f"distance must be positive, got {distance_m}")
    return 2.0 * cfg.bandwidth_hz * distance_m / (SPEED_OF_LIGHT * cfg.chirp_time_s)


def max_unambiguous_distance(cfg: RadarConfig) -> float:
    """Largest distance whose beat frequency stays below the sample rate."""
    return SPEED_OF_LIGHT * cfg.chirp_time_s * cfg.sample_rate_hz / (2.0 * cfg.bandwidth_hz)


def synth_clean_beat(targets: list[TargetSpec], cfg: RadarConfig) -> np.ndarray:
    """Sum of target beat exponentials over one chirp, noise-free."""
    if not targets:
        raise DomainError("target list must not be empty")
    t = cfg.time_axis()
    out = np.zeros(cfg.samples_per_chirp, dtype=np.complex128)
    for tgt in targets:
        fb = beat_frequency(tgt.distance_m, cfg)
        if fb >= cfg.sample_rate_hz:
            raise DomainError(
                f"target at {tgt.distance_m} m aliases: beat {fb:.3e} Hz >= "
                f"sample rate {cfg.sample_rate_hz:.3e} Hz"
            )
        out += tgt.amplitude * np.exp(1j * (2.0 * np.pi * fb * t + tgt.phase_rad))
    return out


def synth_interference(
    interferers: list[InterferenceSpec], ref_power: float, cfg: RadarConfig
) -> np.ndarray:
    """Sum of gated linear-chirp interference bursts.

    Each interferer contributes A * exp(i*(pi*da*(t-tc)^2 + phase)) on the
    samples where its instantaneous beat frequency |da*(t-tc)| stays within
    the anti-aliasing band [-fs/2, fs/2], and zero elsewhere.  A is chosen so
    that the full-chirp mean power of the contribution realizes sir_db
    against ref_power, which keeps short bursts proportionally stronger
    inside their support.
    """
    if not ref_power > 0:
        raise DomainError(f"ref_power must be positive, got {ref_power}")
    t = cfg.time_axis()
    n = cfg.samples_per_chirp
    out = np.zeros(n, dtype=np.complex128)
    for itf in interferers:
        da = cfg.chirp_slope * (1.0 - itf.slope_ratio)
        dt = t - itf.center_time_s
        gate = np.abs(da * dt) <= cfg.sample_rate_hz / 2.0
        count = int(gate.sum())
        if count == 0:
            continue
        mean_power = ref_power * 10.0 ** (-itf.sir_db / 10.0)
        amp = math.sqrt(mean_power * n / count)
        burst = amp * np.exp(1j * (np.pi * da * dt * dt + itf.phase_rad))
        out += np.where(gate, burst, 0.0)
    return out


def interference_gate_mask(itf: InterferenceSpec, cfg: RadarConfig) -> np.ndarray:
    """Boolean support of one interferer's burst (anti-aliasing gate)."""
    da = cfg.chirp_slope * (1.0 - itf.slope_ratio)
    dt = cfg.time_axis() - itf.center_time_s
    return np.abs(da * dt) <= cfg.sample_rate_hz / 2.0


def add_noise(
    signal: np.ndarray, snr_db: float, ref_power: float, rng: np.random.Generator
) -> np.ndarray:
    """Add circularly-symmetric complex white Gaussian noise.

    Per-sample noise variance is ref_power / 10^(snr_db/10).  An infinite
    snr_db disables noise entirely (no draws are consumed from rng).
    """
    if not ref_power > 0:
        raise DomainError(f"ref_power must be positive, got {ref_power}")
    if math.isinf(snr_db):
        return signal.copy()
    sigma2 = ref_power / 10.0 ** (snr_db / 10.0)
    draws = rng.standard_normal((2, len(signal)))
    noise = math.sqrt(sigma2 / 2.0) * (draws[0] + 1j * draws[1])
    return signal + noise


def _stepped_values(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(round((hi - lo) / step)) + 1
    return lo + step * np.arange(count)


@dataclass(frozen=True)
class GenerationConfig:
    """Parameter ranges for drawing random scenarios.

    Discrete parameters (interferer count, SNR) are drawn from stepped
    min..max grids; the remaining parameters are uniform on [min, max).
    """

    radar: RadarConfig
    interferers_min: int = 1
    interferers_max: int = 3
    interferers_step: int = 1
    snr_db_min: float = 5.0
    snr_db_max: float = 40.0
    snr_db_step: float = 5.0
    sir_db_min: float = -5.0
    sir_db_max: float = 40.0
    slope_ratio_min: float = 0.0
    slope_ratio_max: float = 1.5
    targets_min: int = 1
    targets_max: int = 4
    amplitude_min: float = 0.01
    amplitude_max: float = 1.0
    distance_m_min: float = 2.0
    distance_m_max: float = 95.0
    noise_enabled: bool = True

    def __post_init__(self):
        pairs = [
            ("interferers", self.interferers_min, self.interferers_max),
            ("snr_db", self.snr_db_min, self.snr_db_max),
            ("sir_db", self.sir_db_min, self.sir_db_max),
            ("slope_ratio", self.slope_ratio_min, self.slope_ratio_max),
            ("targets", self.targets_min, self.targets_max),
            ("amplitude", self.amplitude_min, self.amplitude_max),
            ("distance_m", self.distance_m_min, self.distance_m_max),
        ]
        for name, lo, hi in pairs:
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")
        if self.interferers_min < 0:
            raise ConfigError("interferer count cannot be negative")
        if self.interferers_step < 1 or self.snr_db_step <= 0:
            raise ConfigError("steps must be positive")
        if self.targets_min < 1:
            raise ConfigError("at least one target is required")
        if self.amplitude_min <= 0:
            raise ConfigError("amplitude must stay positive")
        if self.distance_m_min <= 0:
            raise ConfigError("distance must stay positive")
        if beat_frequency(self.distance_m_max, self.radar) >= self.radar.sample_rate_hz:
            raise ConfigError(
                f"distance_m_max {self.distance_m_max} m aliases under the radar config"
            )

    @property
    def interferer_choices(self) -> np.ndarray:
        return np.arange(self.interferers_min, self.interferers_max + 1, self.interferers_step)

    @property
    def snr_choices(self) -> np.ndarray:
        return _stepped_values(self.snr_db_min, self.snr_db_max, self.snr_db_step)

    def with_interferer_counts(self, counts: list[int]) -> "GenerationConfig":
        """Override the interferer-count grid with a contiguous stepped set."""
        counts = sorted(set(int(c) for c in counts))
        if not counts:
            raise ConfigError("interferer count set must not be empty")
        step = 1 if len(counts) == 1 else counts[1] - counts[0]
        if step < 1 or list(range(counts[0], counts[-1] + 1, step)) != counts:
            raise ConfigError(f"interferer counts {counts} do not form a stepped range")
        return replace(
            self,
            interferers_min=counts[0],
            interferers_max=counts[-1],
            interferers_step=step,
        )


def sample_scenario(gen: GenerationConfig, rng: np.random.Generator) -> ScenarioSample:
    """Draw one random scenario and synthesize its signals.

    Draw order is fixed (interferer count, SNR, target count, per-target
    amplitude/distance/phase, per-interferer slope/SIR/timing/phase, then
    noise) so that a given seed always reproduces the same sample bit for
    bit.
    """
    cfg = gen.radar
    choices = gen.interferer_choices
    n_int = int(choices[rng.integers(len(choices))])
    if gen.noise_enabled:
        snr_db = float(gen.snr_choices[rng.integers(len(gen.snr_choices))])
    else:
        snr_db = math.inf
    n_targets = int(rng.integers(gen.targets_min, gen.targets_max + 1))
    targets = [
        TargetSpec(
            amplitude=float(rng.uniform(gen.amplitude_min, gen.amplitude_max)),
            distance_m=float(rng.uniform(gen.distance_m_min, gen.distance_m_max)),
            phase_rad=float(rng.uniform(-np.pi, np.pi)),
        )
        for _ in range(n_targets)
    ]
    interferers = [
        InterferenceSpec(
            slope_ratio=float(rng.uniform(gen.slope_ratio_min, gen.slope_ratio_max)),
            sir_db=float(rng.uniform(gen.sir_db_min, gen.sir_db_max)),
            center_time_s=float(rng.uniform(0.0, cfg.chirp_time_s)),
            phase_rad=float(rng.uniform(-np.pi, np.pi)),
        )
        for _ in range(n_int)
    ]
    clean = synth_clean_beat(targets, cfg)
    ref_power = max(t.amplitude for t in targets) ** 2
    interfered = clean + synth_interference(interferers, ref_power, cfg)
    interfered = add_noise(interfered, snr_db, ref_power, rng)
    return ScenarioSample(
        clean_signal=clean,
        interfered_signal=interfered,
        targets=targets,
        interferers=interferers,
        snr_db=snr_db,
    )
