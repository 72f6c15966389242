# app/api/deps.py
from fastapi import HTTPException

from app.core.config import Settings, get_settings
from app.utils.error_handling import LegendError


def get_app_settings() -> Settings:
    return get_settings()


def http_error(exc: LegendError) -> HTTPException:
    """Map a simulator failure onto the HTTP status its class declares."""
    return HTTPException(status_code=exc.http_status, detail=str(exc))
