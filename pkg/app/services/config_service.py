# app/services/config_service.py
"""Experiment configuration files.

The file is TOML: top-level `seed`, `rounds` and `output_dir`, plus the
sections [model], [planner], [training], [data] and [devices] (optionally
with [[devices.profiles]] rows). Missing keys take their defaults; unknown
keys are errors. The fully resolved configuration is echoed back as
`config.resolved.toml` next to the results.
"""
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
import tomli_w
from pydantic import ValidationError

from app.core.config import get_settings
from app.schemas.experiment import ExperimentConfig
from app.schemas.planner import StaticDeviceProfile
from app.utils.error_handling import ConfigError, ProfileFormatError

logger = logging.getLogger(__name__)

ECHO_FILENAME = "config.resolved.toml"


def describe_validation_error(exc: ValidationError) -> str:
    """One line per problem, prefixed with its dotted key path."""
    lines = []
    for error in exc.errors():
        path = ".".join(str(part) for part in error["loc"]) or "<root>"
        lines.append(f"{path}: {error['msg']}")
    return "; ".join(lines)


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {describe_validation_error(exc)}") from None


def load_config_text(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed configuration file: {exc}") from None
    return config_from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return tomli_w.dumps(config.model_dump(mode="json", exclude_none=True))


def resolve_output_dir(config: ExperimentConfig, override: Optional[Path] = None) -> Path:
    """Explicit override, then LEGEND_OUTPUT_DIR, then the config's output_dir."""
    if override is not None:
        return override
    env_dir = get_settings().OUTPUT_DIR
    return env_dir if env_dir is not None else config.output_dir


def echo_config(config: ExperimentConfig, output_dir: Path) -> Path:
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / ECHO_FILENAME
    path.write_text(dump_config(config), encoding="utf-8")
    return path


def parse_config(path: Path, echo_dir: Optional[Path] = None) -> ExperimentConfig:
    """Read, validate and (optionally) echo a configuration file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file {path} does not exist")
    config = load_config_text(path.read_text(encoding="utf-8"))
    if echo_dir is not None:
        echoed = echo_config(config, echo_dir)
        logger.info(f"resolved configuration written to {echoed}")
    return config


PROFILE_COLUMNS = ["device_id", "mu", "beta", "forward_time", "compute_budget", "comm_budget"]


def load_profiles(path: Path) -> List[StaticDeviceProfile]:
    """
    Read a device profile table.

    Columns: device_id, mu, beta and optionally forward_time,
    compute_budget, comm_budget. Empty budget cells mean unlimited.
    """
    path = Path(path)
    if not path.is_file():
        raise ProfileFormatError(f"profile file {path} does not exist")
    try:
        frame = pd.read_csv(path, comment="#", skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ProfileFormatError(f"cannot read profile file {path}: {exc}") from None
    frame.columns = [str(column).strip() for column in frame.columns]
    unknown = [column for column in frame.columns if column not in PROFILE_COLUMNS]
    missing = [column for column in ("device_id", "mu", "beta") if column not in frame.columns]
    if unknown or missing:
        raise ProfileFormatError(f"profile columns: missing {missing}, unknown {unknown}")
    if frame.empty:
        raise ProfileFormatError(f"profile file {path} has no rows")

    profiles = []
    for line, record in enumerate(frame.to_dict(orient="records"), start=2):
        values = {
            key: value.item() if hasattr(value, "item") else value
            for key, value in record.items()
            if not pd.isna(value)
        }
        try:
            profiles.append(StaticDeviceProfile.model_validate(values))
        except ValidationError as exc:
            raise ProfileFormatError(f"{path} row {line}: {describe_validation_error(exc)}") from None
    ids = [profile.device_id for profile in profiles]
    if len(set(ids)) != len(ids):
        raise ProfileFormatError(f"duplicate device_id in {path}")
    return profiles
