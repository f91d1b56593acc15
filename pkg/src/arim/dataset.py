"""Dataset generation, persistence and loading with reproducible splits.

On-disk layout: one ``manifest.json`` plus one fixed-layout little-endian
binary record per sample.  Records are a pure function of the generation
config and the per-sample seed (base_seed + index), so deleting them and
regenerating from the manifest reproduces every file bit for bit.

Record format (all little-endian):
  magic "ARIM2" | format version u32 | signal length u32 |
  clean signal (re, im) f32 pairs | interfered signal (re, im) f32 pairs |
  target count u32 | per target (distance, amplitude, phase) f32 |
  interferer count u32 | per interferer (slope_ratio, sir_db,
  center_time_s, phase) f32 | snr_db f32
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, PersistenceError, RangeError
from .radar import (
    GenerationConfig,
    InterferenceSpec,
    RadarConfig,
    ScenarioSample,
    TargetSpec,
    sample_scenario,
)
from .spectral import StftConfig

RECORD_MAGIC = b"ARIM2"
RECORD_VERSION = 1
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def record_name(index: int) -> str:
    return f"rec{index:06d}.bin"


@dataclass
class DatasetManifest:
    generation: GenerationConfig
    stft: StftConfig
    base_seed: int
    sample_count: int
    split: dict[str, list[int]]
    version: int = MANIFEST_VERSION
    root: Path | None = None  # set when loaded from / written to disk

    @property
    def radar(self) -> RadarConfig:
        return self.generation.radar

    def validate_split(self) -> None:
        seen: list[int] = []
        for part in ("train", "validation", "test"):
            seen.extend(self.split.get(part, []))
        if sorted(seen) != list(range(self.sample_count)):
            raise ConfigError(
                "split lists must be disjoint and cover every sample index"
            )


def _gen_to_dict(gen: GenerationConfig) -> dict:
    out = dataclasses.asdict(gen)
    out["radar"] = dataclasses.asdict(gen.radar)
    return out


def _gen_from_dict(d: dict) -> GenerationConfig:
    radar = RadarConfig(**d["radar"])
    rest = {k: v for k, v in d.items() if k != "radar"}
    return GenerationConfig(radar=radar, **rest)


def manifest_to_json(manifest: DatasetManifest) -> str:
    payload = {
        "version": manifest.version,
        "generation": _gen_to_dict(manifest.generation),
        "stft": dataclasses.asdict(manifest.stft),
        "base_seed": manifest.base_seed,
        "sample_count": manifest.sample_count,
        "split": {k: list(map(int, v)) for k, v in manifest.split.items()},
    }
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def manifest_from_json(text: str) -> DatasetManifest:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    try:
        if payload["version"] != MANIFEST_VERSION:
            raise FormatError(f"unsupported manifest version {payload['version']}")
        return DatasetManifest(
            generation=_gen_from_dict(payload["generation"]),
            stft=StftConfig(**payload["stft"]),
            base_seed=int(payload["base_seed"]),
            sample_count=int(payload["sample_count"]),
            split={k: [int(i) for i in v] for k, v in payload["split"].items()},
            version=int(payload["version"]),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"manifest is missing fields: {exc}") from exc


def save_manifest(manifest: DatasetManifest, out_dir) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / MANIFEST_NAME
        path.write_text(manifest_to_json(manifest))
    except OSError as exc:
        raise PersistenceError(f"cannot write manifest under {out_dir}: {exc}") from exc
    manifest.root = out_dir
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        text = path.read_text()
    except OSError as exc:
        raise PersistenceError(f"cannot read manifest {path}: {exc}") from exc
    manifest = manifest_from_json(text)
    manifest.root = path.parent
    return manifest


def sample_to_bytes(sample: ScenarioSample) -> bytes:
    n = len(sample.clean_signal)
    blob = bytearray()
    blob += RECORD_MAGIC
    blob += struct.pack("<II", RECORD_VERSION, n)
    for signal in (sample.clean_signal, sample.interfered_signal):
        pairs = np.empty((n, 2), dtype="<f4")
        pairs[:, 0] = signal.real
        pairs[:, 1] = signal.imag
        blob += pairs.tobytes()
    blob += struct.pack("<I", len(sample.targets))
    for t in sample.targets:
        blob += struct.pack("<fff", t.distance_m, t.amplitude, t.phase_rad)
    blob += struct.pack("<I", len(sample.interferers))
    for i in sample.interferers:
        blob += struct.pack("<ffff", i.slope_ratio, i.sir_db, i.center_time_s, i.phase_rad)
    blob += struct.pack("<f", sample.snr_db)
    return bytes(blob)


def sample_from_bytes(data: bytes, origin="record") -> ScenarioSample:
    off = 0

    def take(count: int) -> bytes:
        nonlocal off
        if off + count > len(data):
            raise FormatError(f"truncated {origin}")
        chunk = data[off:off + count]
        off += count
        return chunk

    if take(5) != RECORD_MAGIC:
        raise FormatError(f"{origin} has a bad magic header")
    version, n = struct.unpack("<II", take(8))
    if version != RECORD_VERSION:
        raise FormatError(f"{origin} has unsupported version {version}")
    signals = []
    for _ in range(2):
        pairs = np.frombuffer(take(8 * n), dtype="<f4").reshape(n, 2).astype(np.float64)
        signals.append(pairs[:, 0] + 1j * pairs[:, 1])
    (n_targets,) = struct.unpack("<I", take(4))
    targets = []
    for _ in range(n_targets):
        d, a, p = struct.unpack("<fff", take(12))
        targets.append(TargetSpec(distance_m=d, amplitude=a, phase_rad=p))
    (n_int,) = struct.unpack("<I", take(4))
    interferers = []
    for _ in range(n_int):
        s, sir, tc, p = struct.unpack("<ffff", take(16))
        interferers.append(
            InterferenceSpec(slope_ratio=s, sir_db=sir, center_time_s=tc, phase_rad=p)
        )
    (snr_db,) = struct.unpack("<f", take(4))
    if off != len(data):
        raise FormatError(f"{origin} has {len(data) - off} trailing bytes")
    return ScenarioSample(
        clean_signal=signals[0],
        interfered_signal=signals[1],
        targets=targets,
        interferers=interferers,
        snr_db=float(snr_db),
    )


def write_sample(path, sample: ScenarioSample) -> None:
    try:
        Path(path).write_bytes(sample_to_bytes(sample))
    except OSError as exc:
        raise PersistenceError(f"cannot write record {path}: {exc}") from exc


def read_record(path) -> ScenarioSample:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read record {path}: {exc}") from exc
    return sample_from_bytes(data, origin=str(path))


def read_sample(manifest: DatasetManifest, index: int) -> ScenarioSample:
    if manifest.root is None:
        raise ConfigError("manifest has no on-disk root; save or load it first")
    if not 0 <= index < manifest.sample_count:
        raise RangeError(
            f"sample index {index} outside [0, {manifest.sample_count})"
        )
    return read_record(Path(manifest.root) / record_name(index))


def default_split(sample_count: int, seed: int) -> dict[str, list[int]]:
    """5/6 train, 1/6 test via a seed-determined shuffle."""
    order = np.random.default_rng([seed, 2]).permutation(sample_count)
    n_test = sample_count // 6
    n_train = sample_count - n_test
    return {
        "train": sorted(int(i) for i in order[:n_train]),
        "validation": [],
        "test": sorted(int(i) for i in order[n_train:]),
    }


def generate_dataset(manifest_in: DatasetManifest, out_dir) -> DatasetManifest:
    """Write every record plus the finalized manifest; idempotent."""
    if manifest_in.sample_count < 1:
        raise ConfigError("sample_count must be at least 1")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"cannot create {out_dir}: {exc}") from exc
    split = manifest_in.split or default_split(manifest_in.sample_count, manifest_in.base_seed)
    manifest = replace(manifest_in, split=split)
    manifest.validate_split()
    for index in range(manifest.sample_count):
        rng = np.random.default_rng(manifest.base_seed + index)
        sample = sample_scenario(manifest.generation, rng)
        write_sample(out_dir / record_name(index), sample)
    save_manifest(manifest, out_dir)
    return manifest


def split_dataset(
    manifest: DatasetManifest, validation_fraction: float, seed: int
) -> DatasetManifest:
    """Carve a validation set out of the training indices, deterministically."""
    if not 0 <= validation_fraction < 1:
        raise ConfigError(
            f"validation_fraction must lie in [0, 1), got {validation_fraction}"
        )
    train = sorted(manifest.split.get("train", []) + manifest.split.get("validation", []))
    n_val = int(math.floor(validation_fraction * len(train)))
    order = np.random.default_rng([seed, 3]).permutation(len(train))
    chosen = set(order[:n_val])
    new_split = {
        "train": [t for i, t in enumerate(train) if i not in chosen],
        "validation": [t for i, t in enumerate(train) if i in chosen],
        "test": list(manifest.split.get("test", [])),
    }
    out = replace(manifest, split=new_split)
    out.root = manifest.root
    return out


def generate_ood_testset(
    manifest_in: DatasetManifest,
    interferer_counts: list[int],
    count: int,
    out_dir,
) -> DatasetManifest:
    """Generate an out-of-distribution test set with forced interferer counts.

    Every sample lands in the test split; all other parameters follow the
    base manifest's generation config.
    """
    gen = manifest_in.generation.with_interferer_counts(list(interferer_counts))
    manifest = replace(
        manifest_in,
        generation=gen,
        sample_count=count,
        split={"train": [], "validation": [], "test": list(range(count))},
    )
    return generate_dataset(manifest, out_dir)
