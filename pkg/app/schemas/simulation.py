# app/schemas/simulation.py
import math
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.planner import DeviceBudget


class DeviceProfile(BaseModel):
    """Ground-truth behaviour of one simulated device.

    mu is seconds per backpropagated layer at multiplier 1; forward_time is
    the per-round forward cost; bandwidth bounds are in Mb/s.
    """

    model_config = ConfigDict(extra="forbid")

    device_id: int = Field(ge=0)
    mu: float = Field(gt=0)
    forward_time: float = Field(default=1.0, ge=0)
    modes: List[float] = Field(default_factory=lambda: [1.0], min_length=1)
    mode_period: int = Field(default=20, ge=1)
    bandwidth_lo: float = Field(default=1.0, gt=0)
    bandwidth_hi: float = Field(default=30.0, gt=0)
    noise: float = Field(default=0.05, ge=0, lt=1)
    compute_budget: Optional[float] = Field(default=None, gt=0)
    comm_budget: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def check_ranges(self) -> "DeviceProfile":
        if any(multiplier <= 0 for multiplier in self.modes):
            raise ValueError(f"mode multipliers must be positive, got {self.modes}")
        if self.bandwidth_lo > self.bandwidth_hi:
            raise ValueError(
                f"bandwidth_lo {self.bandwidth_lo} exceeds bandwidth_hi {self.bandwidth_hi}"
            )
        return self

    def budget(self) -> DeviceBudget:
        return DeviceBudget(
            compute=math.inf if self.compute_budget is None else self.compute_budget,
            comm=math.inf if self.comm_budget is None else self.comm_budget,
        )


class DeviceRoundRecord(BaseModel):
    device_id: int
    depth: int
    rank_sum: int
    completion_time: float
    up_bytes: int
    down_bytes: int
    mu_actual: float
    beta_actual: float
    train_loss: float


class RoundReport(BaseModel):
    round: int
    planner: str
    devices: List[DeviceRoundRecord]
    round_time: float
    avg_wait: float
    wait_violation: bool
    eval_loss: float
    eval_acc: float
    cum_time: float
    cum_bytes: int

    @model_validator(mode="after")
    def check_timing(self) -> "RoundReport":
        from app.services.planner_service import PlannerService

        times = [record.completion_time for record in self.devices]
        if not times:
            return self
        if self.round_time != max(times):
            raise ValueError(f"round_time {self.round_time} differs from slowest device {max(times)}")
        if self.avg_wait != PlannerService.avg_waiting(times):
            raise ValueError(f"avg_wait {self.avg_wait} does not match the device completion times")
        return self

    @property
    def up_bytes(self) -> int:
        return sum(record.up_bytes for record in self.devices)

    @property
    def down_bytes(self) -> int:
        return sum(record.down_bytes for record in self.devices)


class ExperimentSummary(BaseModel):
    planner: str
    rounds: int
    cumulative_time: float
    cumulative_bytes: int
    mean_wait: float
    final_eval_acc: float
    best_eval_acc: float
    final_train_acc: float
