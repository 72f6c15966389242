# app/api/v1/endpoints/plans.py
from typing import Any

from fastapi import APIRouter

from app.api.deps import http_error
from app.schemas.planner import PlanRequest, PlanResponse, PlanRow
from app.services.planner_service import plan_static
from app.utils.error_handling import LegendError

router = APIRouter()


@router.post("/", response_model=PlanResponse)
def create_plan(*, plan_in: PlanRequest) -> Any:
    """
    Plan one round for a static device profile table.
    """
    try:
        plan = plan_static(plan_in.profiles, plan_in.params)
    except LegendError as exc:
        raise http_error(exc)

    rows = [
        PlanRow(
            device_id=device_id,
            depth=config.depth,
            ranks=config.ranks,
            predicted_time=plan.predicted_times[device_id],
            budget_feasible=device_id not in plan.infeasible_devices,
        )
        for device_id, config in sorted(plan.configs.items())
    ]
    return PlanResponse(
        rows=rows,
        rank_distribution=plan.rank_distribution,
        depth_gap=plan.depth_gap,
        predicted_round_time=plan.predicted_round_time,
        predicted_avg_wait=plan.predicted_avg_wait,
        wait_violation=plan.wait_violation,
    )
