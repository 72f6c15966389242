# app/schemas/capacity.py
from pydantic import BaseModel, ConfigDict, Field


class DeviceStatus(BaseModel):
    """Status a device reports after a round: observed per-layer backprop time,
    per-unit-rank upload time and forward time, all in seconds."""

    model_config = ConfigDict(frozen=True)

    device_id: int
    round: int = Field(ge=0)
    mu_hat: float = Field(ge=0)
    beta_hat: float = Field(ge=0)
    forward_time: float = Field(default=0.0, ge=0)


class CapacityEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    device_id: int
    round: int
    mu: float = Field(ge=0)
    beta: float = Field(ge=0)
    forward_time: float = Field(default=0.0, ge=0)
    rho: float = Field(default=0.8, ge=0, le=1)
