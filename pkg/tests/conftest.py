# tests/conftest.py
from pathlib import Path

import pytest

from app.schemas.experiment import (
    DataSection,
    DevicesSection,
    ExperimentConfig,
    ModelSection,
    PlannerSection,
)
from app.services.numerics import SeededRng

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def rng() -> SeededRng:
    return SeededRng(seed=1234, stream_id=0)


@pytest.fixture
def small_config() -> ExperimentConfig:
    """Four noise-free devices, four layers of width 8: a few rounds run in well under a second."""
    return ExperimentConfig(
        seed=3,
        rounds=4,
        model=ModelSection(num_layers=4, dim=8),
        planner=PlannerSection(rank_budget=12),
        data=DataSection(train_samples=120, test_samples=40),
        devices=DevicesSection(
            count=4,
            mu_min=0.5,
            mu_spread=8.0,
            modes=[1.0],
            noise=0.0,
            bandwidth_lo=10.0,
            bandwidth_hi=10.0,
        ),
    )


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR
