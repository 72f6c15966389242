# models/lora.py
import enum
import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from app.services.numerics import Matrix
from app.utils.error_handling import ConfigMismatchError, RankError, ShapeMismatchError
from app.utils.validation import is_nondecreasing


class Activation(str, enum.Enum):
    TANH = "tanh"
    IDENTITY = "identity"


@dataclass(frozen=True)
class BackboneLayer:
    """Frozen pre-trained linear layer y = act(M x); M is read-only."""

    weight: Matrix
    activation: Activation = Activation.TANH

    def __post_init__(self) -> None:
        if self.weight.ndim != 2:
            raise ShapeMismatchError(f"layer weight must be 2-D, got {self.weight.shape}")
        self.weight.setflags(write=False)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def checksum(self) -> str:
        return hashlib.sha256(self.weight.tobytes()).hexdigest()


@dataclass
class LoraAdapter:
    """Low-rank bypass B (m x r) @ A (r x q) for one block."""

    layer_index: int
    rank: int
    B: Matrix
    A: Matrix

    def __post_init__(self) -> None:
        m, r_b = self.B.shape
        r_a, q = self.A.shape
        if r_b != self.rank or r_a != self.rank:
            raise ShapeMismatchError(
                f"adapter at layer {self.layer_index}: B {self.B.shape} and A {self.A.shape} "
                f"do not match rank {self.rank}"
            )
        if not 1 <= self.rank <= min(m, q):
            raise RankError(f"rank {self.rank} outside [1, {min(m, q)}] at layer {self.layer_index}")

    @property
    def delta(self) -> Matrix:
        return self.B @ self.A

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(self.layer_index, self.rank, self.B.copy(), self.A.copy())


@dataclass
class LayerStack:
    """Frozen backbone, optional adapters on a contiguous window of layers, trainable head."""

    layers: Tuple[BackboneLayer, ...]
    head: Matrix
    adapters: Dict[int, LoraAdapter] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.layers = tuple(self.layers)
        if self.head.shape[1] != self.layers[-1].out_dim:
            raise ShapeMismatchError(
                f"head {self.head.shape} does not match last layer output {self.layers[-1].out_dim}"
            )
        for index, adapter in self.adapters.items():
            if not 0 <= index < len(self.layers):
                raise ConfigMismatchError(f"adapter index {index} outside [0, {len(self.layers) - 1}]")
            layer = self.layers[index]
            if adapter.B.shape[0] != layer.out_dim or adapter.A.shape[1] != layer.in_dim:
                raise ShapeMismatchError(
                    f"adapter at layer {index} does not fit weight {layer.weight.shape}"
                )
        keys = sorted(self.adapters)
        if keys and keys != list(range(keys[0], keys[-1] + 1)):
            raise ConfigMismatchError(f"adapted layers must be contiguous, got {keys}")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_classes(self) -> int:
        return self.head.shape[0]

    @property
    def depth(self) -> int:
        return len(self.adapters)

    @property
    def lowest_adapted(self) -> int:
        """Index of the shallowest adapted layer, or L when nothing is adapted."""
        return min(self.adapters) if self.adapters else self.num_layers

    @property
    def ranks(self) -> List[int]:
        return [self.adapters[index].rank for index in sorted(self.adapters)]

    def check_federated(self) -> None:
        """Federated stacks carry adapters on a suffix with nondecreasing ranks."""
        keys = sorted(self.adapters)
        if keys and keys[-1] != self.num_layers - 1:
            raise ConfigMismatchError(f"adapted layers {keys} are not a suffix of {self.num_layers} layers")
        if not is_nondecreasing(self.ranks):
            raise ConfigMismatchError(f"ranks {self.ranks} decrease with depth")

    def backbone_checksum(self) -> str:
        digest = hashlib.sha256()
        for layer in self.layers:
            digest.update(layer.weight.tobytes())
        return digest.hexdigest()


@dataclass
class ForwardCache:
    """inputs[l] feeds layer l; inputs[L] is the final activation fed to the head."""

    inputs: List[Matrix]
    num_layers: int
    adapted: Tuple[int, ...]


@dataclass
class AdapterGrad:
    dB: Matrix
    dA: Matrix


@dataclass
class AdapterGrads:
    head: Matrix
    adapters: Dict[int, AdapterGrad] = field(default_factory=dict)
