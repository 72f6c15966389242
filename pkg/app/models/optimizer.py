# models/optimizer.py
import enum
from dataclasses import dataclass, field
from typing import Dict, Tuple

from app.services.numerics import Matrix


class OptimizerKind(str, enum.Enum):
    SGD = "sgd"
    ADAMW = "adamw"


@dataclass
class OptimizerState:
    kind: OptimizerKind = OptimizerKind.ADAMW
    base_lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    # parameter name -> (first moment, second moment)
    moments: Dict[str, Tuple[Matrix, Matrix]] = field(default_factory=dict)

    def reset(self) -> None:
        self.step_count = 0
        self.moments.clear()
