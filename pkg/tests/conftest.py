import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from arim.config import load_experiment_config
from arim.radar import GenerationConfig, RadarConfig


@pytest.fixture(scope="session")
def table_radar() -> RadarConfig:
    """Full-scale sensor: 1.6 GHz bandwidth, 25.6 us chirps, 40 MHz sampling."""
    return RadarConfig(
        bandwidth_hz=1.6e9, chirp_time_s=25.6e-6, sample_rate_hz=40e6, carrier_hz=78e9
    )


@pytest.fixture(scope="session")
def desk_radar() -> RadarConfig:
    return load_experiment_config("desk").radar


@pytest.fixture(scope="session")
def desk_experiment():
    return load_experiment_config("desk")


@pytest.fixture(scope="session")
def full_generation(table_radar) -> GenerationConfig:
    return GenerationConfig(radar=table_radar)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
