# models/global_state.py
from dataclasses import dataclass, field
from typing import Dict, List

from app.models.lora import LoraAdapter
from app.services.numerics import Matrix


@dataclass
class DeviceUpdate:
    """What one device uploads after local fine-tuning."""

    device_id: int
    adapters: Dict[int, LoraAdapter]
    head: Matrix


@dataclass
class GlobalLoraState:
    """Server copy of every layer's adapter plus the shared head.

    counts[l] is how many devices contributed to layer l in the last aggregation.
    """

    adapters: Dict[int, LoraAdapter]
    head: Matrix
    counts: List[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.counts:
            self.counts = [0] * len(self.adapters)

    @property
    def num_layers(self) -> int:
        return len(self.adapters)

    @property
    def ranks(self) -> List[int]:
        return [self.adapters[index].rank for index in range(self.num_layers)]
