# app/schemas/planner.py
import enum
import math
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.lora import LoraConfig


class DepthRule(str, enum.Enum):
    ENDPOINT_NORMALIZED = "endpoint_normalized"
    PAPER_LITERAL = "paper_literal"


class CompletionReference(str, enum.Enum):
    FULL_DEPTH = "full_depth"
    PREVIOUS_PLAN = "previous_plan"


class PlannerKind(str, enum.Enum):
    LEGEND = "legend"
    FEDLORA = "fedlora"
    HETLORA = "hetlora"
    LEGEND_NO_DEPTH = "legend-no-depth"
    LEGEND_NO_RANKDIST = "legend-no-rankdist"

    @property
    def label(self) -> str:
        # The capacity-proportional rank rule is a stand-in, not the published method.
        if self is PlannerKind.HETLORA:
            return "hetlora-simplified"
        return self.value


class PlannerParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_layers: int = Field(ge=1)
    rank_budget: int = Field(ge=1)
    rank_step: int = Field(default=1, ge=0)
    wait_threshold: float = Field(default=5.0, ge=0)
    compute_cost_per_rank: float = Field(default=1.0, gt=0)
    forward_compute_cost: float = Field(default=0.0, ge=0)
    comm_cost_per_rank: float = Field(default=1.0, gt=0)
    depth_rule: DepthRule = DepthRule.ENDPOINT_NORMALIZED
    completion_reference: CompletionReference = CompletionReference.FULL_DEPTH

    @model_validator(mode="after")
    def check_budget_covers_layers(self) -> "PlannerParams":
        if self.rank_budget < self.num_layers:
            raise ValueError(
                f"rank_budget {self.rank_budget} must be at least num_layers {self.num_layers}"
            )
        return self


class DeviceBudget(BaseModel):
    model_config = ConfigDict(frozen=True)

    compute: float = math.inf
    comm: float = math.inf


class BudgetCheck(BaseModel):
    depth: int
    feasible: bool


class Plan(BaseModel):
    planner: str
    configs: Dict[int, LoraConfig]
    rank_distribution: List[int]
    depth_gap: int = 0
    reference_times: Dict[int, float] = Field(default_factory=dict)
    predicted_times: Dict[int, float] = Field(default_factory=dict)
    predicted_round_time: float = 0.0
    predicted_avg_wait: float = 0.0
    wait_violation: bool = False
    infeasible_devices: List[int] = Field(default_factory=list)
    cold_start: bool = False


class StaticDeviceProfile(BaseModel):
    """One row of a profile table: device_id, mu, beta, forward_time, budgets."""

    model_config = ConfigDict(extra="forbid")

    device_id: int
    mu: float = Field(ge=0)
    beta: float = Field(ge=0)
    forward_time: float = Field(default=0.0, ge=0)
    compute_budget: Optional[float] = Field(default=None, gt=0)
    comm_budget: Optional[float] = Field(default=None, gt=0)

    def budget(self) -> DeviceBudget:
        return DeviceBudget(
            compute=math.inf if self.compute_budget is None else self.compute_budget,
            comm=math.inf if self.comm_budget is None else self.comm_budget,
        )


class PlanRequest(BaseModel):
    profiles: List[StaticDeviceProfile] = Field(min_length=1)
    params: PlannerParams


class PlanRow(BaseModel):
    device_id: int
    depth: int
    ranks: List[int]
    predicted_time: float
    budget_feasible: bool


class PlanResponse(BaseModel):
    rows: List[PlanRow]
    rank_distribution: List[int]
    depth_gap: int
    predicted_round_time: float
    predicted_avg_wait: float
    wait_violation: bool
