# models/simulation.py
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from app.models.global_state import GlobalLoraState
from app.models.optimizer import OptimizerState
from app.schemas.capacity import CapacityEstimate
from app.schemas.planner import Plan
from app.schemas.simulation import ExperimentSummary, RoundReport


@dataclass
class SimulationState:
    """Everything the server carries from one round to the next."""

    round_index: int
    global_state: GlobalLoraState
    estimates: Dict[int, CapacityEstimate] = field(default_factory=dict)
    previous_plan: Optional[Plan] = None
    optimizers: Dict[int, OptimizerState] = field(default_factory=dict)
    cum_time: float = 0.0
    cum_bytes: int = 0


@dataclass
class ExperimentLog:
    planner: str
    reports: List[RoundReport] = field(default_factory=list)
    plans: List[Plan] = field(default_factory=list)
    final_train_loss: float = math.nan
    final_train_acc: float = math.nan
    metered_bytes: int = 0

    def __len__(self) -> int:
        return len(self.reports)

    @property
    def cumulative_time(self) -> float:
        return self.reports[-1].cum_time if self.reports else 0.0

    @property
    def cumulative_bytes(self) -> int:
        return self.reports[-1].cum_bytes if self.reports else 0

    @property
    def mean_wait(self) -> float:
        if not self.reports:
            return 0.0
        return sum(report.avg_wait for report in self.reports) / len(self.reports)

    @property
    def best_accuracy(self) -> float:
        return max((report.eval_acc for report in self.reports), default=math.nan)

    @property
    def final_accuracy(self) -> float:
        return self.reports[-1].eval_acc if self.reports else math.nan

    def _first_reaching(self, target: float) -> Optional[RoundReport]:
        return next((report for report in self.reports if report.eval_acc >= target), None)

    def time_to_accuracy(self, target: float) -> Optional[float]:
        """Simulated seconds until the global model first reaches `target` test accuracy."""
        report = self._first_reaching(target)
        return None if report is None else report.cum_time

    def traffic_to_accuracy(self, target: float) -> Optional[int]:
        report = self._first_reaching(target)
        return None if report is None else report.cum_bytes

    def summary(self) -> ExperimentSummary:
        return ExperimentSummary(
            planner=self.planner,
            rounds=len(self.reports),
            cumulative_time=self.cumulative_time,
            cumulative_bytes=self.cumulative_bytes,
            mean_wait=self.mean_wait,
            final_eval_acc=self.final_accuracy,
            best_eval_acc=self.best_accuracy,
            final_train_acc=self.final_train_acc,
        )
