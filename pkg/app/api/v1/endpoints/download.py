# app/api/v1/endpoints/download.py
from datetime import datetime

from fastapi import APIRouter
from fastapi.responses import StreamingResponse

from app.api.deps import http_error
from app.schemas.experiment import ExperimentConfig
from app.services.export_service import create_excel_report
from app.services.simulation_service import run_experiment
from app.utils.error_handling import LegendError

router = APIRouter()

XLSX_MEDIA_TYPE = "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet"


@router.post("/")
def download_experiment(*, config_in: ExperimentConfig):
    """
    Run an experiment and download its rounds, device records and plans as Excel.
    """
    try:
        log = run_experiment(config_in)
    except LegendError as exc:
        raise http_error(exc)

    excel_file = create_excel_report(log)
    filename = f"experiment_{log.planner}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.xlsx"

    return StreamingResponse(
        excel_file,
        media_type=XLSX_MEDIA_TYPE,
        headers={"Content-Disposition": f"attachment; filename={filename}"},
    )
