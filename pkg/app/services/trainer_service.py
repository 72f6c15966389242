# app/services/trainer_service.py
import logging
import math
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from app.models.dataset import SyntheticDataset
from app.models.lora import LayerStack
from app.models.optimizer import OptimizerKind, OptimizerState
from app.services import lora_service
from app.services.numerics import Matrix, SeededRng
from app.utils.error_handling import ShapeMismatchError
from app.utils.validation import ensure_finite

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 4


def make_synthetic(
    rng: SeededRng,
    n_samples: int,
    dim: int,
    num_classes: int,
    separation: float = 3.0,
    noise_std: float = 0.5,
) -> SyntheticDataset:
    """Gaussian clusters around per-class means of norm `separation`, drawn once from rng."""
    if n_samples < 1 or dim < 1 or num_classes < 1:
        raise ValueError("n_samples, dim and num_classes must be positive")
    means = rng.normal(1.0, (num_classes, dim))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    means = separation * means / np.where(norms > 0, norms, 1.0)
    labels = rng.integers(num_classes, n_samples).astype(np.int64)
    noise = rng.normal(noise_std, (n_samples, dim))
    features = (means[labels] + noise).T
    return SyntheticDataset(np.ascontiguousarray(features), labels, num_classes)


def dirichlet_partition(
    rng: SeededRng, dataset: SyntheticDataset, n_devices: int, alpha: float
) -> List[SyntheticDataset]:
    """Split each class across devices with Dir(alpha) proportions; no device ends up empty."""
    if n_devices < 1:
        raise ValueError("n_devices must be at least 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if len(dataset) < n_devices:
        raise ValueError(f"{len(dataset)} samples cannot cover {n_devices} devices")
    if n_devices == 1:
        return [dataset]

    shards: List[List[int]] = [[] for _ in range(n_devices)]
    for label in range(dataset.num_classes):
        indices = np.flatnonzero(dataset.labels == label)
        rng.shuffle(indices)
        proportions = rng.dirichlet([alpha] * n_devices)
        cuts = (np.cumsum(proportions) * len(indices)).astype(int)[:-1]
        for device, part in enumerate(np.split(indices, cuts)):
            shards[device].extend(int(i) for i in part)

    # Empty shards take one sample from the current largest shard.
    for device in range(n_devices):
        if not shards[device]:
            donor = max(range(n_devices), key=lambda d: (len(shards[d]), -d))
            shards[device].append(shards[donor].pop())
    return [dataset.subset(sorted(shard)) for shard in shards]


def cross_entropy(logits: Matrix, labels: NDArray[np.int64]) -> Tuple[float, Matrix]:
    """Mean softmax cross-entropy over batch columns and its gradient w.r.t. logits."""
    num_classes, batch = logits.shape
    if batch == 0:
        raise ValueError("batch must be nonempty")
    if labels.shape[0] != batch:
        raise ShapeMismatchError(f"{batch} logit columns but {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"label outside [0, {num_classes - 1}]")
    shifted = logits - logits.max(axis=0, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    log_probs = shifted - log_norm
    columns = np.arange(batch)
    loss = float(-log_probs[labels, columns].mean())
    grad = np.exp(log_probs)
    grad[labels, columns] -= 1.0
    return loss, grad / batch


def loss_and_grad(stack: LayerStack, features: Matrix, labels: NDArray[np.int64]) -> Tuple[float, Matrix]:
    logits, _ = lora_service.forward(stack, features)
    return cross_entropy(logits, labels)


def evaluate(stack: LayerStack, dataset: SyntheticDataset) -> Tuple[float, float]:
    """Return (mean loss, accuracy) of the stack on a whole dataset."""
    logits, _ = lora_service.forward(stack, dataset.features)
    loss, _ = cross_entropy(logits, dataset.labels)
    accuracy = float(np.mean(np.argmax(logits, axis=0) == dataset.labels))
    return loss, accuracy


def step(
    opt: OptimizerState, params: Mapping[str, Matrix], grads: Mapping[str, Matrix], lr: float
) -> Dict[str, Matrix]:
    """One optimizer step; returns new arrays and leaves the inputs untouched."""
    for name, value in params.items():
        if grads[name].shape != value.shape:
            raise ShapeMismatchError(f"{name}: gradient {grads[name].shape} vs parameter {value.shape}")
    opt.step_count += 1
    if opt.kind is OptimizerKind.SGD:
        return {name: value - lr * grads[name] for name, value in params.items()}

    t = opt.step_count
    updated = {}
    for name, value in params.items():
        g = grads[name]
        m, v = opt.moments.get(name, (np.zeros_like(value), np.zeros_like(value)))
        if m.shape != value.shape:
            m, v = np.zeros_like(value), np.zeros_like(value)
        m = opt.beta1 * m + (1 - opt.beta1) * g
        v = opt.beta2 * v + (1 - opt.beta2) * (g * g)
        opt.moments[name] = (m, v)
        m_hat = m / (1 - opt.beta1 ** t)
        v_hat = v / (1 - opt.beta2 ** t)
        updated[name] = value - lr * (m_hat / (np.sqrt(v_hat) + opt.eps) + opt.weight_decay * value)
    # Parameters that disappeared (shallower adapters no longer assigned) drop their moments.
    for stale in set(opt.moments) - set(params):
        del opt.moments[stale]
    return {name: ensure_finite(value, "optimizer step") for name, value in updated.items()}


def cosine_lr(base_lr: float, round_index: int, total_rounds: int) -> float:
    if total_rounds <= 0:
        return base_lr
    if not 0 <= round_index <= total_rounds:
        raise ValueError(f"round {round_index} outside [0, {total_rounds}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * round_index / total_rounds))


def steps_per_epoch(shard: SyntheticDataset, batch_size: int) -> int:
    return math.ceil(len(shard) / batch_size)


def local_finetune(
    stack: LayerStack,
    shard: SyntheticDataset,
    opt: OptimizerState,
    rng: SeededRng,
    steps: Optional[int] = None,
    lr: Optional[float] = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    train_head: bool = True,
) -> Tuple[LayerStack, float]:
    """Update only adapters (and the head unless frozen) over shuffled mini-batches.

    `steps` defaults to one epoch; the order is reshuffled from `rng` every
    time the shard is exhausted. With zero steps the stack is returned as is
    and the loss of the initial model on the shard is reported.
    """
    if len(shard) == 0:
        raise ValueError("cannot fine-tune on an empty shard")
    if steps is None:
        steps = steps_per_epoch(shard, batch_size)
    lr = opt.base_lr if lr is None else lr
    if steps == 0:
        loss, _ = evaluate(stack, shard)
        return stack, loss

    params = lora_service.trainable_parameters(stack)
    losses = []
    order = rng.permutation(len(shard))
    cursor = 0
    for _ in range(steps):
        if cursor >= len(order):
            order = rng.permutation(len(shard))
            cursor = 0
        batch_indices = order[cursor:cursor + batch_size]
        cursor += batch_size
        features, labels = shard.batch(batch_indices)

        current = lora_service.with_parameters(stack, params)
        logits, cache = lora_service.forward(current, features)
        loss, grad_logits = cross_entropy(logits, labels)
        losses.append(loss)
        named = lora_service.parameter_gradients(lora_service.backward(current, cache, grad_logits))
        trainable = {name: value for name, value in params.items() if train_head or name != "head"}
        params = {**params, **step(opt, trainable, named, lr)}

    mean_loss = float(np.mean(losses))
    logger.debug(f"local fine-tune: {steps} steps, depth {stack.depth}, mean loss {mean_loss:.4f}")
    return lora_service.with_parameters(stack, params), mean_loss
