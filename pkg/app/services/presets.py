# app/services/presets.py
"""Named experiment configurations."""
from typing import Callable, Dict, List

from app.schemas.experiment import DataSection, DevicesSection, ExperimentConfig, ModelSection
from app.utils.error_handling import ConfigError


def hetero10() -> ExperimentConfig:
    """10 devices with mu spread 10x geometrically, no noise, one mode and a fixed 10 Mb/s link."""
    return ExperimentConfig(
        rounds=100,
        model=ModelSection(num_layers=6, dim=16),
        devices=DevicesSection(
            count=10,
            mu_min=0.5,
            mu_spread=10.0,
            forward_time=1.0,
            modes=[1.0],
            noise=0.0,
            bandwidth_lo=10.0,
            bandwidth_hi=10.0,
        ),
    )


def convergence() -> ExperimentConfig:
    return ExperimentConfig(
        rounds=50,
        model=ModelSection(num_layers=6, dim=16),
        data=DataSection(num_classes=2),
        devices=DevicesSection(count=10),
    )


def homogeneous() -> ExperimentConfig:
    return ExperimentConfig(
        rounds=20,
        devices=DevicesSection(
            count=10,
            mu_min=1.0,
            mu_spread=1.0,
            modes=[1.0],
            noise=0.0,
            bandwidth_lo=10.0,
            bandwidth_hi=10.0,
        ),
    )


PRESETS: Dict[str, Callable[[], ExperimentConfig]] = {
    "hetero10": hetero10,
    "convergence": convergence,
    "homogeneous": homogeneous,
}


def preset_names() -> List[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose one of {', '.join(preset_names())}") from None
