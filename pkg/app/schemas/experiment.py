# app/schemas/experiment.py
"""Experiment configuration tree.

Every section forbids unknown keys, so a typo in a config file is reported
with its key path instead of being silently ignored. Defaults:
rho=0.8, rank_step (lambda)=1, lr=0.002 with cosine decay, batch_size=4,
rounds=100, mode_period=20, alpha=10.
"""
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.models.lora import Activation
from app.models.optimizer import OptimizerKind
from app.schemas.planner import CompletionReference, DepthRule, PlannerKind, PlannerParams
from app.schemas.simulation import DeviceProfile


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    num_layers: int = Field(default=6, ge=1)
    dim: int = Field(default=16, ge=1)
    activation: Activation = Activation.TANH
    adapter_std: float = Field(default=0.02, ge=0)
    backbone_gain: float = Field(default=1.0, gt=0)
    head_std: float = Field(default=0.02, ge=0)
    # Only used for traffic accounting: each block is treated as this many
    # adapted linears sharing one rank.
    adapted_linears_per_block: int = Field(default=6, ge=1)


class PlannerSection(_Section):
    kind: PlannerKind = PlannerKind.LEGEND
    depth_rule: DepthRule = DepthRule.ENDPOINT_NORMALIZED
    completion_reference: CompletionReference = CompletionReference.FULL_DEPTH
    rank_budget: int = Field(default=30, ge=1)
    rank_step: int = Field(default=1, ge=0)
    wait_threshold: float = Field(default=5.0, ge=0)
    rho: float = Field(default=0.8, ge=0, le=1)
    compute_cost_per_rank: float = Field(default=1.0, gt=0)
    forward_compute_cost: float = Field(default=0.0, ge=0)
    comm_cost_per_rank: float = Field(default=1.0, gt=0)
    uniform_rank: Optional[int] = Field(default=None, ge=1)
    hetlora_rank_min: int = Field(default=1, ge=1)
    hetlora_rank_max: Optional[int] = Field(default=None, ge=1)


class TrainingSection(_Section):
    optimizer: OptimizerKind = OptimizerKind.ADAMW
    lr: float = Field(default=0.002, ge=0)
    batch_size: int = Field(default=4, ge=1)
    local_epochs: int = Field(default=1, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)
    reset_optimizer: bool = True
    workers: int = Field(default=1, ge=1)


class DataSection(_Section):
    train_samples: int = Field(default=1000, ge=1)
    test_samples: int = Field(default=200, ge=1)
    num_classes: int = Field(default=2, ge=1)
    alpha: float = Field(default=10.0, gt=0)
    separation: float = Field(default=3.0, gt=0)
    noise_std: float = Field(default=0.5, ge=0)


class DevicesSection(_Section):
    count: int = Field(default=10, ge=1)
    mu_min: float = Field(default=0.5, gt=0)
    mu_spread: float = Field(default=10.0, ge=1)
    forward_time: float = Field(default=1.0, ge=0)
    modes: List[float] = Field(default_factory=lambda: [1.0, 1.5, 2.0, 3.0], min_length=1)
    mode_period: int = Field(default=20, ge=1)
    bandwidth_lo: float = Field(default=1.0, gt=0)
    bandwidth_hi: float = Field(default=30.0, gt=0)
    noise: float = Field(default=0.05, ge=0, lt=1)
    compute_budget: Optional[float] = Field(default=None, gt=0)
    comm_budget: Optional[float] = Field(default=None, gt=0)
    # Explicit rows replace the generated table when given.
    profiles: List[DeviceProfile] = Field(default_factory=list)

    def resolve_profiles(self) -> List[DeviceProfile]:
        """Explicit profiles, or `count` devices with mu geometric over [mu_min, mu_min*mu_spread]."""
        if self.profiles:
            return list(self.profiles)
        generated = []
        for device_id in range(self.count):
            fraction = device_id / (self.count - 1) if self.count > 1 else 0.0
            generated.append(
                DeviceProfile(
                    device_id=device_id,
                    mu=self.mu_min * self.mu_spread ** fraction,
                    forward_time=self.forward_time,
                    modes=list(self.modes),
                    mode_period=self.mode_period,
                    bandwidth_lo=self.bandwidth_lo,
                    bandwidth_hi=self.bandwidth_hi,
                    noise=self.noise,
                    compute_budget=self.compute_budget,
                    comm_budget=self.comm_budget,
                )
            )
        return generated


class ExperimentConfig(_Section):
    seed: int = 0
    rounds: int = Field(default=100, ge=0)
    output_dir: Path = Path("results")
    model: ModelSection = Field(default_factory=ModelSection)
    planner: PlannerSection = Field(default_factory=PlannerSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    data: DataSection = Field(default_factory=DataSection)
    devices: DevicesSection = Field(default_factory=DevicesSection)

    @model_validator(mode="after")
    def check_feasibility(self) -> "ExperimentConfig":
        from app.services.planner_service import PlannerService

        try:
            params = self.planner_params()
        except ValidationError as exc:
            raise ValueError(exc.errors()[0]["msg"]) from None
        distribution = PlannerService.global_rank_distribution(
            params.num_layers, params.rank_budget, params.rank_step
        )
        largest = max(distribution + [self.uniform_rank, self.hetlora_rank_max])
        if largest > self.model.dim:
            raise ValueError(f"rank {largest} exceeds model dim {self.model.dim}")
        if self.planner.hetlora_rank_min > self.hetlora_rank_max:
            raise ValueError(
                f"hetlora_rank_min {self.planner.hetlora_rank_min} exceeds "
                f"hetlora_rank_max {self.hetlora_rank_max}"
            )
        if self.data.train_samples < len(self.devices.resolve_profiles()):
            raise ValueError("train_samples must be at least the number of devices")
        return self

    def planner_params(self) -> PlannerParams:
        return PlannerParams(
            num_layers=self.model.num_layers,
            rank_budget=self.planner.rank_budget,
            rank_step=self.planner.rank_step,
            wait_threshold=self.planner.wait_threshold,
            compute_cost_per_rank=self.planner.compute_cost_per_rank,
            forward_compute_cost=self.planner.forward_compute_cost,
            comm_cost_per_rank=self.planner.comm_cost_per_rank,
            depth_rule=self.planner.depth_rule,
            completion_reference=self.planner.completion_reference,
        )

    @property
    def uniform_rank(self) -> int:
        if self.planner.uniform_rank is not None:
            return self.planner.uniform_rank
        return max(1, self.planner.rank_budget // self.model.num_layers)

    @property
    def hetlora_rank_max(self) -> int:
        if self.planner.hetlora_rank_max is not None:
            return self.planner.hetlora_rank_max
        return self.uniform_rank
