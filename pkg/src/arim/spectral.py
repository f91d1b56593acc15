"""Time-frequency transforms feeding the network and its labels.

The STFT uses an absolute-time phase reference: frame m at bin k carries the
factor exp(-2j*pi*k*m*hop/n_fft) relative to a chunk-local DFT.  With this
convention a bin-aligned tone has the same complex value in every frame,
which is what lets a translation-invariant network recover phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

PHASE_EPS = 1e-12  # below this magnitude the phase of a bin is defined as 0


@dataclass(frozen=True)
class StftConfig:
    window_len: int
    hop: int
    n_fft: int
    window_kind: str = "hamming"

    def __post_init__(self):
        if self.window_len < 1 or self.hop < 1 or self.n_fft < 1:
            raise ConfigError("window_len, hop and n_fft must be positive")
        if self.window_len > self.n_fft:
            raise ConfigError(
                f"window_len {self.window_len} exceeds n_fft {self.n_fft}"
            )
        if self.window_kind != "hamming":
            raise ConfigError(f"unsupported window kind {self.window_kind!r}")

    def frame_count(self, signal_len: int) -> int:
        if signal_len < self.window_len:
            raise DomainError(
                f"signal of length {signal_len} is shorter than the window "
                f"({self.window_len})"
            )
        return (signal_len - self.window_len) // self.hop + 1

    def window(self) -> np.ndarray:
        n = np.arange(self.window_len)
        if self.window_len == 1:
            return np.ones(1)
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (self.window_len - 1))


@dataclass
class ThreeChannelInput:
    """Network input: (frames, n_fft, 3) channels (real, magnitude, imag)."""

    data: np.ndarray
    scale: float


@dataclass
class ThreeChannelLabel:
    """Regression target: (1, n_fft, 3) channels (real, magnitude, imag)."""

    data: np.ndarray
    scale: float


def stft(signal: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Windowed, hopped, zero-padded DFT; returns a (frames, n_fft) matrix.

    Frames never run past the end of the signal (no tail padding).
    """
    signal = np.asarray(signal)
    frames = cfg.frame_count(len(signal))
    w = cfg.window()
    starts = np.arange(frames) * cfg.hop
    chunks = np.lib.stride_tricks.sliding_window_view(signal, cfg.window_len)[starts]
    spec = np.fft.fft(chunks * w, n=cfg.n_fft, axis=1)
    k = np.arange(cfg.n_fft)
    spec *= np.exp(-2j * np.pi * np.outer(starts % cfg.n_fft, k) / cfg.n_fft)
    return spec


def range_fft(signal: np.ndarray, n_fft: int) -> np.ndarray:
    """Zero-padded DFT of the whole signal, no window."""
    signal = np.asarray(signal)
    if n_fft < len(signal):
        raise DomainError(f"n_fft {n_fft} is smaller than the signal ({len(signal)})")
    return np.fft.fft(signal, n=n_fft)


def assemble_input(spec: np.ndarray) -> ThreeChannelInput:
    """Stack (real, magnitude, imag) channels normalized by the peak magnitude."""
    spec = np.asarray(spec)
    if spec.size == 0:
        raise DomainError("spectrogram must not be empty")
    mag = np.abs(spec)
    peak = float(mag.max())
    scale = peak if peak > 0 else 1.0
    data = np.stack([spec.real / scale, mag / scale, spec.imag / scale], axis=-1)
    return ThreeChannelInput(data=data, scale=scale)


def assemble_label(clean_signal: np.ndarray, n_fft: int, scale: float) -> ThreeChannelLabel:
    """Range FFT of the clean signal scaled by the paired input's factor."""
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    prof = range_fft(clean_signal, n_fft) / scale
    data = np.stack([prof.real, np.abs(prof), prof.imag], axis=-1)[np.newaxis, :, :]
    return ThreeChannelLabel(data=data, scale=scale)


def profile_from_channels(label_or_prediction) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and phase vectors from a 3-channel representation.

    Magnitude comes from the middle channel; phase from atan2(imag, real).
    Bins whose (real, imag) magnitude falls below PHASE_EPS get phase 0 so
    that numerically empty bins do not report noise-driven angles.
    """
    data = getattr(label_or_prediction, "data", label_or_prediction)
    data = np.asarray(data)
    flat = data.reshape(-1, data.shape[-1])
    re, mag, im = flat[:, 0], flat[:, 1], flat[:, 2]
    phase = np.arctan2(im, re)
    phase[np.hypot(re, im) < PHASE_EPS] = 0.0
    return mag.copy(), phase
