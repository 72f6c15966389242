# tests/test_planner.py
import itertools
import math

import numpy as np
import pytest

from app.schemas.capacity import CapacityEstimate
from app.schemas.lora import LoraConfig
from app.schemas.planner import DepthRule, DeviceBudget, PlannerKind, PlannerParams, StaticDeviceProfile
from app.services import baseline_service
from app.services.planner_service import PlannerService, estimates_from_profiles, plan_static
from app.utils.error_handling import InfeasibleBudgetError, PlannerError

PARAMS_12 = PlannerParams(num_layers=12, rank_budget=96, rank_step=1)


def _estimate(device_id, mu, beta=0.0, forward_time=0.0):
    return CapacityEstimate(device_id=device_id, round=0, mu=mu, beta=beta, forward_time=forward_time)


def _example_profiles():
    # Full-depth completion times 100, 60 and 30 under PARAMS_12.
    return [
        StaticDeviceProfile(device_id=0, mu=8.0, beta=0.0, forward_time=4.0),
        StaticDeviceProfile(device_id=1, mu=5.0, beta=0.0),
        StaticDeviceProfile(device_id=2, mu=2.5, beta=0.0),
    ]


def test_predicted_completion():
    estimate = _estimate(0, mu=2.0, beta=0.5)
    config = LoraConfig(depth=3, ranks=[1, 2, 3])
    assert PlannerService.predict_completion(estimate, 1.0, config) == 10.0


def test_average_waiting():
    assert PlannerService.avg_waiting([5.0, 10.0, 15.0]) == 5.0
    assert PlannerService.avg_waiting([4.0, 4.0, 4.0]) == 0.0
    assert PlannerService.avg_waiting([7.0]) == 0.0
    with pytest.raises(PlannerError):
        PlannerService.avg_waiting([])


def test_depth_gap():
    assert PlannerService.depth_gap([100.0, 60.0, 30.0], 12) == 9
    assert PlannerService.depth_gap([50.0, 50.0], 12) == 0
    assert PlannerService.depth_gap([100.0, 1.0], 12) == 11
    with pytest.raises(PlannerError):
        PlannerService.depth_gap([0.0, 1.0], 12)


def test_device_depths_endpoint_normalized():
    depths = PlannerService.device_depths({0: 100.0, 1: 60.0, 2: 30.0}, 12, 9)
    assert depths == {0: 3, 1: 9, 2: 12}


def test_device_depths_literal_rule():
    depths = PlannerService.device_depths({0: 100.0, 1: 60.0, 2: 30.0}, 12, 9, DepthRule.PAPER_LITERAL)
    assert depths == {0: 3, 1: 7, 2: 10}


def test_literal_rule_is_selectable_by_name():
    params = PlannerParams(num_layers=12, rank_budget=96, depth_rule="paper_literal")
    assert params.depth_rule is DepthRule.PAPER_LITERAL
    plan = plan_static(_example_profiles(), params)
    assert {d: c.depth for d, c in plan.configs.items()} == {0: 3, 1: 7, 2: 10}


def test_rank_distribution():
    assert PlannerService.global_rank_distribution(12, 12, 0) == [1] * 12
    assert PlannerService.global_rank_distribution(12, 96, 1) == list(range(2, 14))
    assert sum(PlannerService.global_rank_distribution(5, 47, 2)) <= 47


def test_infeasible_rank_budget_reports_the_minimum():
    with pytest.raises(InfeasibleBudgetError, match="78") as info:
        PlannerService.global_rank_distribution(12, 66, 1)
    assert info.value.minimum_budget == 78
    assert PlannerService.minimum_rank_budget(12, 1) == 78


def test_budget_enforcement():
    distribution = list(range(2, 14))
    params = PARAMS_12.model_copy(update={"forward_compute_cost": 10.0})
    assert PlannerService.enforce_budgets(distribution, 12, params, DeviceBudget(compute=60.0)).depth == 4
    assert PlannerService.enforce_budgets(distribution, 12, params).depth == 12
    infeasible = PlannerService.enforce_budgets(distribution, 12, params, DeviceBudget(compute=20.0))
    assert (infeasible.depth, infeasible.feasible) == (1, False)
    assert PlannerService.enforce_budgets(distribution, 12, params, DeviceBudget(comm=25.0)).depth == 2


def test_configure_on_example_profiles():
    plan = plan_static(_example_profiles(), PARAMS_12)
    assert plan.depth_gap == 9
    assert {device: config.depth for device, config in plan.configs.items()} == {0: 3, 1: 9, 2: 12}
    assert plan.configs[0].ranks == [11, 12, 13]
    assert plan.configs[1].ranks == list(range(5, 14))
    assert plan.configs[2].ranks == list(range(2, 14))
    assert plan.predicted_times == {0: 28.0, 1: 45.0, 2: 30.0}
    assert plan.predicted_avg_wait == pytest.approx((17.0 + 0.0 + 15.0) / 3)
    assert plan.rank_distribution == list(range(2, 14))


def test_homogeneous_devices_all_get_full_depth():
    estimates = {i: _estimate(i, mu=2.0, beta=0.1) for i in range(4)}
    plan = PlannerService.configure(estimates, PARAMS_12)
    assert plan.depth_gap == 0
    assert {config.depth for config in plan.configs.values()} == {12}
    assert plan.predicted_avg_wait == 0.0


def test_cold_start_and_single_device():
    plan = PlannerService.configure({}, PARAMS_12, device_ids=[0, 1, 2])
    assert plan.cold_start
    assert all(config.depth == 12 for config in plan.configs.values())

    single = PlannerService.configure({0: _estimate(0, mu=3.0)}, PARAMS_12)
    assert single.configs[0].depth == 12
    assert single.predicted_avg_wait == 0.0


def test_missing_estimates_are_rejected():
    with pytest.raises(PlannerError):
        PlannerService.configure({0: _estimate(0, mu=1.0)}, PARAMS_12, device_ids=[0, 1])


def test_planning_is_deterministic():
    estimates = estimates_from_profiles(_example_profiles())
    assert PlannerService.configure(estimates, PARAMS_12) == PlannerService.configure(estimates, PARAMS_12)


def test_plan_beats_uniform_depth_on_heterogeneous_devices():
    params = PlannerParams(num_layers=6, rank_budget=30, rank_step=1)
    estimates = {i: _estimate(i, mu=mu, beta=0.01, forward_time=0.5) for i, mu in enumerate([1.0, 2.0, 4.0])}
    plan = PlannerService.configure(estimates, params)
    uniform = PlannerService.configure(estimates, params, adaptive_depth=False)
    assert plan.predicted_avg_wait < uniform.predicted_avg_wait
    assert plan.predicted_round_time <= uniform.predicted_round_time

    distribution = plan.rank_distribution
    brute_force = min(
        PlannerService.avg_waiting([
            PlannerService.predict_completion(estimates[i], 0.5, LoraConfig.suffix_of(distribution, depth))
            for i, depth in enumerate(depths)
        ])
        for depths in itertools.product(range(1, 7), repeat=3)
    )
    assert brute_force <= plan.predicted_avg_wait


def test_random_plans_respect_every_constraint():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        num_layers = int(rng.integers(1, 13))
        rank_step = int(rng.integers(0, 3))
        minimum = PlannerService.minimum_rank_budget(num_layers, rank_step)
        params = PlannerParams(
            num_layers=num_layers,
            rank_budget=minimum + int(rng.integers(0, 60)),
            rank_step=rank_step,
            compute_cost_per_rank=float(rng.uniform(0.5, 2.0)),
            forward_compute_cost=float(rng.uniform(0.0, 5.0)),
            comm_cost_per_rank=float(rng.uniform(0.5, 2.0)),
        )
        n_devices = int(rng.integers(1, 9))
        estimates = {
            i: _estimate(i, float(rng.uniform(0.1, 10.0)), float(rng.uniform(0.0, 0.5)), float(rng.uniform(0.0, 5.0)))
            for i in range(n_devices)
        }
        budgets = {
            i: DeviceBudget(
                compute=float(rng.uniform(5.0, 200.0)) if rng.random() < 0.5 else math.inf,
                comm=float(rng.uniform(5.0, 200.0)) if rng.random() < 0.5 else math.inf,
            )
            for i in range(n_devices)
        }
        plan = PlannerService.configure(estimates, params, budgets)
        for device_id, config in plan.configs.items():
            assert 1 <= config.depth <= num_layers
            assert config.ranks == plan.rank_distribution[num_layers - config.depth:]
            assert config.rank_sum <= params.rank_budget
            if device_id not in plan.infeasible_devices:
                compute, comm = PlannerService.slice_cost(plan.rank_distribution, config.depth, params)
                assert compute <= budgets[device_id].compute
                assert comm <= budgets[device_id].comm

        unlimited = PlannerService.configure(estimates, params)
        times = unlimited.reference_times
        depths = {i: config.depth for i, config in unlimited.configs.items()}
        for i, j in itertools.permutations(times, 2):
            if times[i] <= times[j]:
                assert depths[i] >= depths[j]
        assert depths[min(times, key=times.get)] == num_layers
        assert depths[max(times, key=times.get)] == num_layers - unlimited.depth_gap


def test_ablations_and_baselines_dispatch():
    estimates = estimates_from_profiles(_example_profiles())
    ids = sorted(estimates)
    no_depth = PlannerService.plan(PlannerKind.LEGEND_NO_DEPTH, estimates, PARAMS_12, ids)
    assert {config.depth for config in no_depth.configs.values()} == {12}

    flat = PlannerService.plan(PlannerKind.LEGEND_NO_RANKDIST, estimates, PARAMS_12, ids)
    assert len(set(flat.rank_distribution)) == 1

    fedlora = PlannerService.plan(PlannerKind.FEDLORA, estimates, PARAMS_12, ids, uniform_rank=8)
    assert all(config.ranks == [8] * 12 for config in fedlora.configs.values())
    assert fedlora.predicted_avg_wait > 0

    hetlora = PlannerService.plan(
        PlannerKind.HETLORA, estimates, PARAMS_12, ids, hetlora_rank_min=2, hetlora_rank_max=8
    )
    assert hetlora.planner == "hetlora-simplified"
    assert hetlora.configs[0].ranks[0] == 2
    assert hetlora.configs[2].ranks[0] == 8


def test_hetlora_gives_alike_devices_the_top_rank():
    estimates = {d: _estimate(d, mu=2.0, beta=0.1) for d in range(4)}
    configs = baseline_service.hetlora_config(estimates, 6, 2, 8)
    assert all(config.ranks == [8] * 6 for config in configs.values())
    assert all(config.depth == 6 for config in configs.values())


def test_hetlora_rank_is_monotone_in_capacity():
    rng = np.random.default_rng(17)
    for _ in range(300):
        n = int(rng.integers(2, 9))
        estimates = {
            d: _estimate(d, mu=float(rng.uniform(0.1, 10.0)), beta=float(rng.uniform(0.0, 1.0))) for d in range(n)
        }
        rank_min = int(rng.integers(1, 5))
        rank_max = rank_min + int(rng.integers(0, 12))
        ranks = baseline_service.hetlora_ranks(estimates, 12, rank_min, rank_max)
        caps = {d: baseline_service.capacity(e, 12) for d, e in estimates.items()}
        assert all(rank_min <= rank <= rank_max for rank in ranks.values())
        for a, b in itertools.permutations(estimates, 2):
            if caps[a] > caps[b]:
                assert ranks[a] >= ranks[b]
        assert ranks[max(caps, key=caps.get)] == rank_max
        assert ranks[min(caps, key=caps.get)] == rank_min
