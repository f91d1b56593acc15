"""Mitigation methods: zeroing baseline, trained model, ground-truth oracle.

Each method returns a MitigationResult holding a complex range profile in
raw (un-normalized) units plus the magnitude vector used by magnitude-based
metrics.  For the model that magnitude is the network's own magnitude
channel, which is not forced to be consistent with the real/imag channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .fcn import FcnModel
from .radar import ScenarioSample
from .spectral import StftConfig, assemble_input, range_fft, stft


@dataclass(frozen=True)
class ZeroingConfig:
    """Median-threshold burst detector with guard-sample dilation."""

    detection_factor: float = 4.0
    guard_samples: int = 2

    def __post_init__(self):
        if not self.detection_factor > 1:
            raise ConfigError("detection_factor must exceed 1")
        if self.guard_samples < 0:
            raise ConfigError("guard_samples must be non-negative")


@dataclass
class MitigationResult:
    profile: np.ndarray  # complex, length n_fft
    magnitude: np.ndarray  # length n_fft
    method: str
    scale: float


def detect_interference_samples(signal: np.ndarray, cfg: ZeroingConfig) -> np.ndarray:
    """Mark samples whose magnitude exceeds factor x median, then dilate."""
    signal = np.asarray(signal)
    if signal.size == 0:
        raise DomainError("signal must not be empty")
    mag = np.abs(signal)
    mask = mag > cfg.detection_factor * np.median(mag)
    if cfg.guard_samples > 0 and mask.any():
        width = 2 * cfg.guard_samples + 1
        mask = np.convolve(mask.astype(np.int64), np.ones(width, dtype=np.int64), "same") > 0
    return mask


def zero_mitigate(signal: np.ndarray, cfg: ZeroingConfig, n_fft: int) -> MitigationResult:
    """Zero the detected samples, then take the range FFT."""
    mask = detect_interference_samples(signal, cfg)
    cleaned = np.where(mask, 0.0, np.asarray(signal))
    profile = range_fft(cleaned, n_fft)
    return MitigationResult(
        profile=profile, magnitude=np.abs(profile), method="zeroing", scale=1.0
    )


def model_mitigate(model: FcnModel, signal: np.ndarray, stft_cfg: StftConfig) -> MitigationResult:
    """STFT, normalize, run the network, then undo the normalization."""
    spec = stft(signal, stft_cfg)
    inp = assemble_input(spec)
    out = model.infer(inp.data) * inp.scale
    profile = out[0, :, 0] + 1j * out[0, :, 2]
    return MitigationResult(
        profile=profile, magnitude=out[0, :, 1].copy(), method="fcn", scale=inp.scale
    )


def oracle_profile(sample: ScenarioSample, n_fft: int) -> MitigationResult:
    """Ground-truth reference: the range FFT of the clean signal."""
    profile = range_fft(sample.clean_signal, n_fft)
    return MitigationResult(
        profile=profile, magnitude=np.abs(profile), method="oracle", scale=1.0
    )
