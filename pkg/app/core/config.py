# app/core/config.py
import json
from pathlib import Path
from typing import List, Optional, Union

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="LEGEND_",
        case_sensitive=True,
        extra="ignore"  # Ignore extra environment variables
    )

    # Output Configuration - overrides ExperimentConfig.output_dir when set
    OUTPUT_DIR: Optional[Path] = None
    LOG_LEVEL: str = "INFO"

    # CORS Configuration
    BACKEND_CORS_ORIGINS: List[str] = ["http://localhost:3000"]

    @field_validator("BACKEND_CORS_ORIGINS", mode="before")
    @classmethod
    def assemble_cors_origins(cls, v: Union[str, List[str]]) -> List[str]:
        if isinstance(v, str):
            # Handle JSON string format from .env
            if v.startswith('[') and v.endswith(']'):
                return json.loads(v)
            # Handle comma-separated format
            return [i.strip() for i in v.split(",") if i.strip()]
        elif isinstance(v, list):
            return v
        raise ValueError(f"Invalid CORS origins format: {v}")

    @field_validator("LOG_LEVEL")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return level

    # Application Constants - Not Environment Specific
    API_V1_STR: str = "/api/v1"
    PROJECT_NAME: str = "LEGEND Federated Fine-Tuning Simulator"


def get_settings() -> Settings:
    """Read settings fresh so env overrides set after import are honoured."""
    return Settings()


settings = get_settings()
