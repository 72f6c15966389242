# tests/test_trainer.py
import math

import numpy as np
import pytest

from app.models.optimizer import OptimizerKind, OptimizerState
from app.schemas.lora import LoraConfig
from app.services import lora_service, trainer_service
from app.services.numerics import SeededRng
from app.utils.error_handling import ShapeMismatchError


def test_uniform_logits_give_log_num_classes():
    loss, grad = trainer_service.cross_entropy(np.zeros((5, 3)), np.array([0, 1, 4]))
    assert loss == pytest.approx(math.log(5), abs=1e-12)
    assert np.allclose(grad.sum(axis=0), 0.0)


def test_confident_logits_give_near_zero_loss():
    logits = np.array([[100.0, -100.0], [-100.0, 100.0]])
    loss, _ = trainer_service.cross_entropy(logits, np.array([0, 1]))
    assert loss < 1e-10


def test_cross_entropy_gradient_matches_finite_differences():
    rng = SeededRng(4, 0)
    logits = rng.normal(1.0, (4, 3))
    labels = np.array([2, 0, 3])
    _, grad = trainer_service.cross_entropy(logits, labels)
    h = 1e-6
    for i in range(4):
        for j in range(3):
            plus, minus = logits.copy(), logits.copy()
            plus[i, j] += h
            minus[i, j] -= h
            numeric = (
                trainer_service.cross_entropy(plus, labels)[0]
                - trainer_service.cross_entropy(minus, labels)[0]
            ) / (2 * h)
            assert abs(grad[i, j] - numeric) <= 1e-7


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        trainer_service.cross_entropy(np.zeros((2, 2)), np.array([0, 2]))
    with pytest.raises(ShapeMismatchError):
        trainer_service.cross_entropy(np.zeros((2, 2)), np.array([0]))


def test_sgd_step():
    opt = OptimizerState(kind=OptimizerKind.SGD)
    updated = trainer_service.step(opt, {"w": np.array([[1.0]])}, {"w": np.array([[2.0]])}, lr=0.5)
    assert np.array_equal(updated["w"], np.array([[0.0]]))
    frozen = trainer_service.step(opt, {"w": np.array([[1.0]])}, {"w": np.array([[2.0]])}, lr=0.0)
    assert np.array_equal(frozen["w"], np.array([[1.0]]))


def test_adamw_first_step_moves_by_learning_rate():
    opt = OptimizerState(kind=OptimizerKind.ADAMW, weight_decay=0.0)
    updated = trainer_service.step(opt, {"w": np.array([[0.5]])}, {"w": np.array([[1.0]])}, lr=0.01)
    assert updated["w"][0, 0] == pytest.approx(0.5 - 0.01 / (1 + 1e-8), abs=1e-9)
    assert opt.step_count == 1


def test_adamw_drops_moments_of_removed_parameters():
    opt = OptimizerState()
    params = {"a": np.ones((2, 2)), "b": np.ones((1, 2))}
    grads = {"a": np.ones((2, 2)), "b": np.ones((1, 2))}
    trainer_service.step(opt, params, grads, lr=0.1)
    trainer_service.step(opt, {"a": params["a"]}, grads, lr=0.1)
    assert set(opt.moments) == {"a"}
    opt.reset()
    assert opt.step_count == 0 and not opt.moments


def test_step_rejects_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        trainer_service.step(OptimizerState(), {"w": np.ones((2, 2))}, {"w": np.ones((2, 1))}, lr=0.1)


def test_cosine_schedule_endpoints():
    assert trainer_service.cosine_lr(0.1, 0, 10) == 0.1
    assert trainer_service.cosine_lr(0.1, 10, 10) == pytest.approx(0.0, abs=1e-15)
    assert trainer_service.cosine_lr(0.1, 5, 10) == pytest.approx(0.05)
    assert trainer_service.cosine_lr(0.1, 0, 0) == 0.1


def test_synthetic_data_is_reproducible_and_learnable():
    a = trainer_service.make_synthetic(SeededRng(9, 1), 400, 8, 2)
    b = trainer_service.make_synthetic(SeededRng(9, 1), 400, 8, 2)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)

    weights = np.zeros((2, 8))
    for _ in range(300):
        _, grad = trainer_service.cross_entropy(weights @ a.features, a.labels)
        weights -= 0.5 * grad @ a.features.T
    accuracy = np.mean(np.argmax(weights @ a.features, axis=0) == a.labels)
    assert accuracy >= 0.95


def test_single_class_dataset():
    data = trainer_service.make_synthetic(SeededRng(1, 1), 30, 4, 1)
    assert set(data.labels.tolist()) == {0}


def test_partition_is_a_disjoint_cover():
    data = trainer_service.make_synthetic(SeededRng(3, 1), 300, 4, 3)
    shards = trainer_service.dirichlet_partition(SeededRng(3, 2), data, 7, 0.5)
    assert len(shards) == 7
    assert sum(len(shard) for shard in shards) == len(data)
    pooled = np.sort(np.concatenate([shard.features[0] for shard in shards]))
    assert np.array_equal(pooled, np.sort(data.features[0]))


def test_large_alpha_gives_near_balanced_shards():
    data = trainer_service.make_synthetic(SeededRng(5, 1), 1000, 4, 2)
    shards = trainer_service.dirichlet_partition(SeededRng(5, 2), data, 10, 10.0)
    balanced = [0.2 <= shard.class_fractions()[0] <= 0.8 for shard in shards]
    assert sum(balanced) >= 9


def test_tiny_datasets_leave_no_device_empty():
    data = trainer_service.make_synthetic(SeededRng(6, 1), 10, 4, 2)
    shards = trainer_service.dirichlet_partition(SeededRng(6, 2), data, 10, 0.1)
    assert all(len(shard) == 1 for shard in shards)
    assert trainer_service.dirichlet_partition(SeededRng(6, 2), data, 1, 0.1)[0] is data
    with pytest.raises(ValueError):
        trainer_service.dirichlet_partition(SeededRng(6, 2), data, 11, 0.1)


def _adapted_stack(seed: int, depth: int = 2):
    rng = SeededRng(seed, 0)
    base = lora_service.build_backbone(rng, num_layers=4, dim=8, num_classes=2)
    return lora_service.inject(base, LoraConfig(depth=depth, ranks=[2] * depth), rng)


def test_zero_steps_returns_the_initial_model():
    stack = _adapted_stack(0)
    shard = trainer_service.make_synthetic(SeededRng(0, 1), 40, 8, 2)
    result, loss = trainer_service.local_finetune(stack, shard, OptimizerState(), SeededRng(0, 2), steps=0)
    assert result is stack
    assert loss == trainer_service.evaluate(stack, shard)[0]


def test_fine_tuning_only_touches_adapters_and_head():
    stack = _adapted_stack(1)
    checksum = stack.backbone_checksum()
    shard = trainer_service.make_synthetic(SeededRng(1, 1), 40, 8, 2)
    tuned, _ = trainer_service.local_finetune(stack, shard, OptimizerState(), SeededRng(1, 2), steps=12)
    assert tuned.backbone_checksum() == checksum
    assert tuned.layers is stack.layers
    assert sorted(tuned.adapters) == [2, 3]
    assert not np.array_equal(tuned.adapters[3].B, stack.adapters[3].B)

    frozen_head, _ = trainer_service.local_finetune(
        stack, shard, OptimizerState(), SeededRng(1, 2), steps=3, train_head=False
    )
    assert np.array_equal(frozen_head.head, stack.head)


def test_one_epoch_reduces_loss():
    improved = 0
    for seed in range(5):
        stack = _adapted_stack(seed)
        shard = trainer_service.make_synthetic(SeededRng(seed, 1), 100, 8, 2)
        before = trainer_service.evaluate(stack, shard)[0]
        tuned, _ = trainer_service.local_finetune(
            stack, shard, OptimizerState(base_lr=1e-3), SeededRng(seed, 2)
        )
        improved += trainer_service.evaluate(tuned, shard)[0] <= before
    assert improved >= 4
