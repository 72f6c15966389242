# app/services/baseline_service.py
"""Reference planners: uniform-rank FedLoRA and a capacity-proportional HetLoRA stand-in."""
import logging
import math
from typing import Dict, Mapping, Sequence

from app.schemas.capacity import CapacityEstimate
from app.schemas.lora import LoraConfig
from app.utils.error_handling import PlannerError, RankError

logger = logging.getLogger(__name__)


def fedlora_config(num_layers: int, uniform_rank: int, device_ids: Sequence[int]) -> Dict[int, LoraConfig]:
    """Every device fine-tunes all layers with the same rank."""
    if uniform_rank < 1:
        raise RankError(f"uniform rank must be at least 1, got {uniform_rank}")
    config = LoraConfig(depth=num_layers, ranks=[uniform_rank] * num_layers)
    return {device_id: config for device_id in device_ids}


def capacity(estimate: CapacityEstimate, num_layers: int) -> float:
    """1 / (mu + beta * L): inverse of the per-round cost of a full-depth unit-rank device."""
    cost = estimate.mu + estimate.beta * num_layers
    return math.inf if cost == 0 else 1.0 / cost


def hetlora_ranks(
    estimates: Mapping[int, CapacityEstimate], num_layers: int, rank_min: int, rank_max: int
) -> Dict[int, int]:
    """Linear map of capacity onto [rank_min, rank_max], rounded half-up.

    A degenerate capacity range (all devices alike) maps every device to rank_max.
    """
    if rank_min > rank_max:
        raise PlannerError(f"rank_min {rank_min} exceeds rank_max {rank_max}")
    caps = {device_id: capacity(estimate, num_layers) for device_id, estimate in estimates.items()}
    if not caps:
        return {}
    cap_min, cap_max = min(caps.values()), max(caps.values())
    if cap_max == cap_min:
        return {device_id: rank_max for device_id in caps}
    if math.isinf(cap_max):
        # Zero-cost devices take rank_max and every other device rank_min.
        return {d: rank_max if math.isinf(c) else rank_min for d, c in caps.items()}
    span = rank_max - rank_min
    return {
        device_id: rank_min + math.floor(span * (cap - cap_min) / (cap_max - cap_min) + 0.5)
        for device_id, cap in caps.items()
    }


def hetlora_config(
    estimates: Mapping[int, CapacityEstimate], num_layers: int, rank_min: int, rank_max: int
) -> Dict[int, LoraConfig]:
    ranks = hetlora_ranks(estimates, num_layers, rank_min, rank_max)
    return {
        device_id: LoraConfig(depth=num_layers, ranks=[rank] * num_layers)
        for device_id, rank in sorted(ranks.items())
    }
