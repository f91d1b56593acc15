"""key = value configuration files for sensor, transform and generation.

Two configurations ship with the package: ``arim-paper.cfg`` (full-scale
sensor, 1024-sample chirps, 2048-bin profiles) and ``arim-desk.cfg``
(256-sample chirps, 512-bin profiles, same chirp slope).  ``--config desk``
or ``--config paper`` on the CLI resolves to the builtin files; any other
value is treated as a filesystem path.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError, PersistenceError
from .radar import GenerationConfig, RadarConfig
from .spectral import StftConfig

BUILTIN_NAMES = {
    "desk": "arim-desk.cfg",
    "arim-desk.cfg": "arim-desk.cfg",
    "paper": "arim-paper.cfg",
    "arim-paper.cfg": "arim-paper.cfg",
}


@dataclass(frozen=True)
class ExperimentConfig:
    generation: GenerationConfig
    stft: StftConfig

    @property
    def radar(self) -> RadarConfig:
        return self.generation.radar


def parse_kv_text(text: str, origin: str = "config") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"{origin}:{lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _get(kv: dict[str, str], key: str, cast, default):
    if key not in kv:
        return default
    raw = kv.pop(key)
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key} = {raw!r}: {exc}") from exc


def _as_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {raw!r}")


def _as_int(raw: str) -> int:
    return int(float(raw)) if float(raw) == int(float(raw)) else int(raw)


def experiment_from_kv(kv: dict[str, str], origin: str = "config") -> ExperimentConfig:
    kv = dict(kv)
    radar = RadarConfig(
        bandwidth_hz=_get(kv, "bandwidth_hz", float, 1.6e9),
        chirp_time_s=_get(kv, "chirp_time_s", float, 25.6e-6),
        sample_rate_hz=_get(kv, "sample_rate_hz", float, 40e6),
        carrier_hz=_get(kv, "carrier_hz", float, 78e9),
    )
    stft = StftConfig(
        window_len=_get(kv, "window_len", _as_int, 106),
        hop=_get(kv, "hop", _as_int, 6),
        n_fft=_get(kv, "n_fft", _as_int, 2048),
        window_kind=_get(kv, "window_kind", str, "hamming"),
    )
    generation = GenerationConfig(
        radar=radar,
        interferers_min=_get(kv, "interferers_min", _as_int, 1),
        interferers_max=_get(kv, "interferers_max", _as_int, 3),
        interferers_step=_get(kv, "interferers_step", _as_int, 1),
        snr_db_min=_get(kv, "snr_db_min", float, 5.0),
        snr_db_max=_get(kv, "snr_db_max", float, 40.0),
        snr_db_step=_get(kv, "snr_db_step", float, 5.0),
        sir_db_min=_get(kv, "sir_db_min", float, -5.0),
        sir_db_max=_get(kv, "sir_db_max", float, 40.0),
        slope_ratio_min=_get(kv, "slope_ratio_min", float, 0.0),
        slope_ratio_max=_get(kv, "slope_ratio_max", float, 1.5),
        targets_min=_get(kv, "targets_min", _as_int, 1),
        targets_max=_get(kv, "targets_max", _as_int, 4),
        amplitude_min=_get(kv, "amplitude_min", float, 0.01),
        amplitude_max=_get(kv, "amplitude_max", float, 1.0),
        distance_m_min=_get(kv, "distance_m_min", float, 2.0),
        distance_m_max=_get(kv, "distance_m_max", float, 95.0),
        noise_enabled=_get(kv, "noise", _as_bool, True),
    )
    if kv:
        raise ConfigError(f"{origin}: unknown keys {sorted(kv)}")
    return ExperimentConfig(generation=generation, stft=stft)


def load_experiment_config(name_or_path: str) -> ExperimentConfig:
    """Load a builtin config by name or any key=value file by path."""
    if name_or_path in BUILTIN_NAMES:
        text = (
            resources.files("arim").joinpath("configs", BUILTIN_NAMES[name_or_path]).read_text()
        )
        origin = BUILTIN_NAMES[name_or_path]
    else:
        path = Path(name_or_path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise PersistenceError(f"cannot read config {path}: {exc}") from exc
        origin = str(path)
    return experiment_from_kv(parse_kv_text(text, origin), origin)


def experiment_to_kv(cfg: ExperimentConfig) -> dict[str, str]:
    g = cfg.generation
    r = g.radar
    s = cfg.stft
    return {
        "bandwidth_hz": repr(r.bandwidth_hz),
        "chirp_time_s": repr(r.chirp_time_s),
        "sample_rate_hz": repr(r.sample_rate_hz),
        "carrier_hz": repr(r.carrier_hz),
        "window_len": str(s.window_len),
        "hop": str(s.hop),
        "n_fft": str(s.n_fft),
        "window_kind": s.window_kind,
        "interferers_min": str(g.interferers_min),
        "interferers_max": str(g.interferers_max),
        "interferers_step": str(g.interferers_step),
        "snr_db_min": repr(g.snr_db_min),
        "snr_db_max": repr(g.snr_db_max),
        "snr_db_step": repr(g.snr_db_step),
        "sir_db_min": repr(g.sir_db_min),
        "sir_db_max": repr(g.sir_db_max),
        "slope_ratio_min": repr(g.slope_ratio_min),
        "slope_ratio_max": repr(g.slope_ratio_max),
        "targets_min": str(g.targets_min),
        "targets_max": str(g.targets_max),
        "amplitude_min": repr(g.amplitude_min),
        "amplitude_max": repr(g.amplitude_max),
        "distance_m_min": repr(g.distance_m_min),
        "distance_m_max": repr(g.distance_m_max),
        "noise": "on" if g.noise_enabled else "off",
    }


def dump_kv(kv: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in kv.items())
