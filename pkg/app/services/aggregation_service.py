# app/services/aggregation_service.py
import logging
from typing import Dict, List, Sequence

from app.models.global_state import DeviceUpdate, GlobalLoraState
from app.models.lora import LayerStack, LoraAdapter
from app.schemas.lora import LoraConfig
from app.services import lora_service
from app.services.numerics import Matrix, SeededRng, zeros
from app.utils.error_handling import ConfigMismatchError, ProtocolViolationError

logger = logging.getLogger(__name__)


def init_global_state(
    rng: SeededRng,
    backbone: LayerStack,
    distribution: Sequence[int],
    std: float = lora_service.DEFAULT_ADAPTER_STD,
) -> GlobalLoraState:
    """Fresh adapters on every layer at the global ranks; B = 0 so round 0 starts from the backbone."""
    if len(distribution) != backbone.num_layers:
        raise ConfigMismatchError(
            f"{len(distribution)} global ranks for a {backbone.num_layers}-layer backbone"
        )
    adapters = {}
    for index, layer in enumerate(backbone.layers):
        adapters[index] = lora_service.init_adapter(
            rng, index, distribution[index], layer.out_dim, layer.in_dim, std
        )
    return GlobalLoraState(adapters=adapters, head=backbone.head.copy())


def _running_mean(values: Sequence[Matrix]) -> Matrix:
    """mean_k = mean_{k-1} + (x_k - mean_{k-1}) / k, in the given order."""
    mean = values[0].copy()
    for k, value in enumerate(values[1:], start=2):
        mean = mean + (value - mean) / k
    return mean


def _ordered(updates: Sequence[DeviceUpdate]) -> List[DeviceUpdate]:
    ordered = sorted(updates, key=lambda update: update.device_id)
    ids = [update.device_id for update in ordered]
    if len(set(ids)) != len(ids):
        raise ProtocolViolationError(f"duplicate device ids among updates: {ids}")
    return ordered


def layerwise_aggregate(global_state: GlobalLoraState, updates: Sequence[DeviceUpdate]) -> GlobalLoraState:
    """
    Average each layer over exactly the devices that trained it.

    B and A are averaged separately, in ascending device-id order. Layers
    nobody trained keep their previous global value; the head is averaged
    over every device.
    """
    ordered = _ordered(updates)
    if not ordered:
        return global_state
    adapters: Dict[int, LoraAdapter] = {}
    counts = []
    for index in range(global_state.num_layers):
        current = global_state.adapters[index]
        contributors = [update for update in ordered if index in update.adapters]
        for update in contributors:
            if update.adapters[index].rank != current.rank:
                raise ProtocolViolationError(
                    f"device {update.device_id} sent rank {update.adapters[index].rank} at layer {index}, "
                    f"global rank is {current.rank}"
                )
        contributions = [update.adapters[index] for update in contributors]
        counts.append(len(contributions))
        if not contributions:
            adapters[index] = current
            continue
        adapters[index] = LoraAdapter(
            index,
            current.rank,
            _running_mean([adapter.B for adapter in contributions]),
            _running_mean([adapter.A for adapter in contributions]),
        )
    head = _running_mean([update.head for update in ordered])
    logger.debug(f"aggregated {len(ordered)} updates, per-layer counts {counts}")
    return GlobalLoraState(adapters=adapters, head=head, counts=counts)


def _pad(adapter: LoraAdapter, rank: int) -> LoraAdapter:
    if adapter.rank > rank:
        raise ProtocolViolationError(
            f"rank {adapter.rank} at layer {adapter.layer_index} exceeds the global rank {rank}"
        )
    m, q = adapter.B.shape[0], adapter.A.shape[1]
    B, A = zeros(m, rank), zeros(rank, q)
    B[:, :adapter.rank] = adapter.B
    A[:adapter.rank, :] = adapter.A
    return LoraAdapter(adapter.layer_index, rank, B, A)


def hetlora_pad_aggregate(global_state: GlobalLoraState, updates: Sequence[DeviceUpdate]) -> GlobalLoraState:
    """Zero-pad every upload to the global rank of its layer, then aggregate layer-wise."""
    padded = [
        DeviceUpdate(
            device_id=update.device_id,
            adapters={
                index: _pad(adapter, global_state.adapters[index].rank)
                for index, adapter in update.adapters.items()
            },
            head=update.head,
        )
        for update in updates
    ]
    return layerwise_aggregate(global_state, padded)


def assign(global_state: GlobalLoraState, config: LoraConfig, truncate: bool = False) -> Dict[int, LoraAdapter]:
    """
    Copies of the global adapters on layers [L - k, L - 1].

    With `truncate`, a device rank below the global rank receives the
    leading columns of B and rows of A; otherwise the ranks must match.
    """
    if config.depth > global_state.num_layers:
        raise ConfigMismatchError(f"depth {config.depth} exceeds {global_state.num_layers} global layers")
    assigned = {}
    for index, rank in config.rank_map(global_state.num_layers).items():
        source = global_state.adapters[index]
        if rank == source.rank:
            assigned[index] = source.copy()
        elif truncate and rank < source.rank:
            assigned[index] = LoraAdapter(
                index, rank, source.B[:, :rank].copy(), source.A[:rank, :].copy()
            )
        else:
            raise ConfigMismatchError(
                f"config rank {rank} at layer {index} does not match global rank {source.rank}"
            )
    return assigned


def device_stack(
    backbone: LayerStack, global_state: GlobalLoraState, config: LoraConfig, truncate: bool = False
) -> LayerStack:
    """The backbone with the assigned global adapters and a private copy of the global head."""
    stack = lora_service.with_adapters(backbone, assign(global_state, config, truncate), global_state.head.copy())
    stack.check_federated()
    return stack


def global_stack(backbone: LayerStack, global_state: GlobalLoraState) -> LayerStack:
    """Full-depth model the server evaluates."""
    return lora_service.with_adapters(backbone, global_state.adapters, global_state.head)
