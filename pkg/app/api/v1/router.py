# app/api/v1/router.py
from fastapi import APIRouter, Depends

from app.api.deps import get_app_settings
from app.api.v1.endpoints import download, experiments, plans
from app.core.config import Settings

api_router = APIRouter()

# Planning
api_router.include_router(plans.router, prefix="/plans", tags=["Plans"])

# Simulation
api_router.include_router(experiments.router, prefix="/experiments", tags=["Experiments"])

# Export
api_router.include_router(download.router, prefix="/download", tags=["Export"])


# Health Check
@api_router.get("/health-check", tags=["Health"])
def health_check(settings: Settings = Depends(get_app_settings)):
    return {"status": "ok", "api_version": "1.0.0", "project": settings.PROJECT_NAME}
