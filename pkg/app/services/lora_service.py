# app/services/lora_service.py
"""Frozen backbone with injectable low-rank adapters.

Per layer l: z_l = M_l x_l + B_l (A_l x_l) (adapter term only on adapted
layers), x_{l+1} = act(z_l), logits = head @ x_L. No alpha/r scaling is
applied. Backward propagates from the head down to the shallowest adapted
layer and stops there: nothing below it is differentiated.
"""
import logging
from typing import Dict, Mapping, Tuple

import numpy as np

from app.models.lora import (
    Activation,
    AdapterGrad,
    AdapterGrads,
    BackboneLayer,
    ForwardCache,
    LayerStack,
    LoraAdapter,
)
from app.schemas.lora import LoraConfig
from app.services.numerics import Matrix, SeededRng, gaussian, matmul, zeros
from app.utils.error_handling import ConfigMismatchError, RankError, ShapeMismatchError
from app.utils.validation import ensure_finite

logger = logging.getLogger(__name__)

DEFAULT_ADAPTER_STD = 0.02


def build_backbone(
    rng: SeededRng,
    num_layers: int,
    dim: int,
    num_classes: int,
    activation: Activation = Activation.TANH,
    gain: float = 1.0,
    head_std: float = DEFAULT_ADAPTER_STD,
) -> LayerStack:
    """Stand-in for a pre-trained model: square dim x dim layers with N(0, gain^2/dim) weights."""
    layers = tuple(
        BackboneLayer(gaussian(rng, dim, dim, gain / np.sqrt(dim)), activation)
        for _ in range(num_layers)
    )
    head = gaussian(rng, num_classes, dim, head_std)
    return LayerStack(layers=layers, head=head)


def init_adapter(
    rng: SeededRng, layer_index: int, rank: int, m: int, q: int, std: float = DEFAULT_ADAPTER_STD
) -> LoraAdapter:
    """B starts at zero so the adapter is a no-op; A ~ N(0, std^2)."""
    if not 1 <= rank <= min(m, q):
        raise RankError(f"rank {rank} outside [1, {min(m, q)}] for a {m}x{q} layer")
    return LoraAdapter(layer_index, rank, zeros(m, rank), gaussian(rng, rank, q, std))


def inject_ranks(
    stack: LayerStack, ranks: Mapping[int, int], rng: SeededRng, std: float = DEFAULT_ADAPTER_STD
) -> LayerStack:
    """Place fresh adapters on an arbitrary contiguous window, ascending layer order."""
    adapters: Dict[int, LoraAdapter] = {}
    for index in sorted(ranks):
        if not 0 <= index < stack.num_layers:
            raise ConfigMismatchError(f"layer {index} outside a {stack.num_layers}-layer stack")
        layer = stack.layers[index]
        adapters[index] = init_adapter(rng, index, ranks[index], layer.out_dim, layer.in_dim, std)
    return LayerStack(layers=stack.layers, head=stack.head.copy(), adapters=adapters)


def inject(
    stack: LayerStack, config: LoraConfig, rng: SeededRng, std: float = DEFAULT_ADAPTER_STD
) -> LayerStack:
    """Adapters on layers [L-k, L-1] with the configured ranks; backbone shared untouched."""
    if config.depth > stack.num_layers:
        raise ConfigMismatchError(f"depth {config.depth} exceeds {stack.num_layers} layers")
    injected = inject_ranks(stack, config.rank_map(stack.num_layers), rng, std)
    injected.check_federated()
    return injected


def with_adapters(stack: LayerStack, adapters: Mapping[int, LoraAdapter], head: Matrix) -> LayerStack:
    return LayerStack(layers=stack.layers, head=head, adapters=dict(adapters))


def _activate(activation: Activation, z: Matrix) -> Matrix:
    if activation is Activation.TANH:
        return np.tanh(z)
    return z


def _activation_grad(activation: Activation, output: Matrix) -> Matrix:
    if activation is Activation.TANH:
        return 1.0 - output * output
    return np.ones_like(output)


def forward(stack: LayerStack, x: Matrix) -> Tuple[Matrix, ForwardCache]:
    if x.ndim != 2 or x.shape[0] != stack.layers[0].in_dim:
        raise ShapeMismatchError(
            f"input {x.shape} does not match layer 0 input dim {stack.layers[0].in_dim}"
        )
    inputs = [x]
    current = x
    for index, layer in enumerate(stack.layers):
        z = matmul(layer.weight, current)
        adapter = stack.adapters.get(index)
        if adapter is not None:
            z = z + matmul(adapter.B, matmul(adapter.A, current))
        current = _activate(layer.activation, z)
        inputs.append(current)
    logits = matmul(stack.head, current)
    return logits, ForwardCache(inputs=inputs, num_layers=stack.num_layers, adapted=tuple(sorted(stack.adapters)))


def backward(stack: LayerStack, cache: ForwardCache, grad_logits: Matrix) -> AdapterGrads:
    if cache.num_layers != stack.num_layers or cache.adapted != tuple(sorted(stack.adapters)):
        raise ConfigMismatchError("forward cache was produced by a different stack")
    top = cache.inputs[-1]
    if grad_logits.shape != (stack.num_classes, top.shape[1]):
        raise ShapeMismatchError(
            f"grad_logits {grad_logits.shape} does not match logits {(stack.num_classes, top.shape[1])}"
        )
    grads = AdapterGrads(head=matmul(grad_logits, top.T))
    if not stack.adapters:
        return grads

    upstream = matmul(stack.head.T, grad_logits)
    lowest = stack.lowest_adapted
    for index in range(stack.num_layers - 1, lowest - 1, -1):
        layer = stack.layers[index]
        x_in, x_out = cache.inputs[index], cache.inputs[index + 1]
        g = upstream * _activation_grad(layer.activation, x_out)
        adapter = stack.adapters.get(index)
        if adapter is not None:
            bt_g = matmul(adapter.B.T, g)
            grads.adapters[index] = AdapterGrad(
                dB=matmul(g, matmul(adapter.A, x_in).T),
                dA=matmul(bt_g, x_in.T),
            )
        if index == lowest:
            break
        upstream = matmul(layer.weight.T, g)
        if adapter is not None:
            upstream = upstream + matmul(adapter.A.T, bt_g)
    for grad in grads.adapters.values():
        ensure_finite(grad.dB, "backward")
        ensure_finite(grad.dA, "backward")
    return grads


def merge(stack: LayerStack) -> LayerStack:
    """Fold every adapter into its layer weight: M + B A."""
    if not stack.adapters:
        return LayerStack(layers=stack.layers, head=stack.head.copy())
    layers = []
    for index, layer in enumerate(stack.layers):
        adapter = stack.adapters.get(index)
        if adapter is None:
            layers.append(layer)
        else:
            layers.append(BackboneLayer(layer.weight + adapter.delta, layer.activation))
    return LayerStack(layers=tuple(layers), head=stack.head.copy())


def trainable_parameters(stack: LayerStack) -> Dict[str, Matrix]:
    params = {"head": stack.head}
    for index in sorted(stack.adapters):
        params[f"B.{index}"] = stack.adapters[index].B
        params[f"A.{index}"] = stack.adapters[index].A
    return params


def parameter_gradients(grads: AdapterGrads) -> Dict[str, Matrix]:
    named = {"head": grads.head}
    for index in sorted(grads.adapters):
        named[f"B.{index}"] = grads.adapters[index].dB
        named[f"A.{index}"] = grads.adapters[index].dA
    return named


def with_parameters(stack: LayerStack, params: Mapping[str, Matrix]) -> LayerStack:
    adapters = {
        index: LoraAdapter(index, adapter.rank, params[f"B.{index}"], params[f"A.{index}"])
        for index, adapter in stack.adapters.items()
    }
    return LayerStack(layers=stack.layers, head=params["head"], adapters=adapters)
