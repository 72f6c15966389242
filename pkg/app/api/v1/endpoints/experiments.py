# app/api/v1/endpoints/experiments.py
from typing import Any, Dict

from fastapi import APIRouter

from app.api.deps import http_error
from app.schemas.experiment import ExperimentConfig
from app.schemas.simulation import ExperimentSummary
from app.services import presets
from app.services.simulation_service import run_experiment
from app.utils.error_handling import LegendError

router = APIRouter()


@router.get("/presets")
def read_presets() -> Dict[str, Any]:
    """
    Named experiment configurations, fully resolved.
    """
    return {
        name: presets.get_preset(name).model_dump(mode="json", exclude_none=True)
        for name in presets.preset_names()
    }


@router.post("/", response_model=ExperimentSummary)
def create_experiment(*, config_in: ExperimentConfig) -> Any:
    """
    Run an experiment synchronously and return its summary.
    """
    try:
        log = run_experiment(config_in)
    except LegendError as exc:
        raise http_error(exc)
    return log.summary()
