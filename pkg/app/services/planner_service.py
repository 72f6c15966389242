# app/services/planner_service.py
"""LoRA configuration planning.

Each round the server predicts every device's completion time
t_i = t_fwd + k * mu + sum(ranks) * beta, derives the depth gap from the
spread of those times, gives slow devices shallow configurations and fast
devices deep ones, and slices every configuration from one shared
nondecreasing rank distribution R.
"""
import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from app.schemas.capacity import CapacityEstimate
from app.schemas.lora import LoraConfig
from app.schemas.planner import (
    BudgetCheck,
    CompletionReference,
    DepthRule,
    DeviceBudget,
    Plan,
    PlannerKind,
    PlannerParams,
)
from app.services import baseline_service
from app.utils.error_handling import InfeasibleBudgetError, PlannerError
from app.utils.validation import tolerant_ceil

logger = logging.getLogger(__name__)

UNLIMITED = DeviceBudget()


class PlannerService:
    """Pure planning functions; nothing here holds state between rounds."""

    @staticmethod
    def predict_completion(estimate: CapacityEstimate, forward_time: float, config: LoraConfig) -> float:
        return forward_time + config.depth * estimate.mu + config.rank_sum * estimate.beta

    @staticmethod
    def avg_waiting(times: Sequence[float]) -> float:
        if not times:
            raise PlannerError("waiting time needs at least one completion time")
        slowest = max(times)
        return sum(slowest - t for t in times) / len(times)

    @staticmethod
    def depth_gap(times: Sequence[float], num_layers: int) -> int:
        """ceil(L * (t_max - t_min) / t_max), clamped so the slowest device keeps one layer."""
        if not times:
            raise PlannerError("depth gap needs at least one completion time")
        if min(times) <= 0:
            raise PlannerError(f"completion times must be positive, got {min(times)}")
        slowest, fastest = max(times), min(times)
        gap = tolerant_ceil(num_layers * (slowest - fastest) / slowest)
        return min(gap, num_layers - 1)

    @staticmethod
    def device_depths(
        times: Mapping[int, float],
        num_layers: int,
        gap: int,
        depth_rule: DepthRule = DepthRule.ENDPOINT_NORMALIZED,
    ) -> Dict[int, int]:
        """Depth floor L - gap plus a share of the gap proportional to how much faster a device is."""
        slowest, fastest = max(times.values()), min(times.values())
        floor_depth = num_layers - gap
        depths = {}
        for device_id, t in times.items():
            if depth_rule is DepthRule.ENDPOINT_NORMALIZED:
                spread = slowest - fastest
                extra = 0 if spread == 0 else tolerant_ceil(gap * (slowest - t) / spread)
            else:
                extra = tolerant_ceil(gap * (slowest - t) / slowest)
            depths[device_id] = max(1, min(num_layers, floor_depth + extra))
        return depths

    @staticmethod
    def global_rank_distribution(num_layers: int, rank_budget: int, rank_step: int) -> List[int]:
        """r_l = r0 + step * l with r0 = floor((psi - step * L(L-1)/2) / L); the remainder stays unused."""
        if num_layers < 1:
            raise PlannerError("at least one layer is required")
        if rank_step < 0:
            raise PlannerError(f"rank step must be non-negative, got {rank_step}")
        increments = rank_step * num_layers * (num_layers - 1) // 2
        base = (rank_budget - increments) // num_layers
        if base < 1:
            minimum = PlannerService.minimum_rank_budget(num_layers, rank_step)
            raise InfeasibleBudgetError(
                f"rank budget {rank_budget} is infeasible for {num_layers} layers with step "
                f"{rank_step}; the minimum feasible budget is {minimum}",
                minimum_budget=minimum,
            )
        return [base + rank_step * layer for layer in range(num_layers)]

    @staticmethod
    def slice_cost(distribution: Sequence[int], depth: int, params: PlannerParams) -> Tuple[float, float]:
        """(compute, comm) cost of the deepest `depth` layers of a distribution."""
        ranks = distribution[len(distribution) - depth:] if depth else []
        rank_sum = sum(ranks)
        return (
            params.forward_compute_cost + rank_sum * params.compute_cost_per_rank,
            rank_sum * params.comm_cost_per_rank,
        )

    @staticmethod
    def enforce_budgets(
        distribution: Sequence[int], depth: int, params: PlannerParams, budget: DeviceBudget = UNLIMITED
    ) -> BudgetCheck:
        """Largest depth <= `depth` whose deepest slice fits both budgets; never below 1."""
        if depth < 1:
            raise PlannerError(f"depth must be at least 1, got {depth}")
        for candidate in range(depth, 0, -1):
            compute, comm = PlannerService.slice_cost(distribution, candidate, params)
            if compute <= budget.compute and comm <= budget.comm:
                return BudgetCheck(depth=candidate, feasible=True)
        return BudgetCheck(depth=1, feasible=False)

    @staticmethod
    def reference_times(
        estimates: Mapping[int, CapacityEstimate],
        distribution: Sequence[int],
        params: PlannerParams,
        previous_plan: Optional[Plan] = None,
    ) -> Dict[int, float]:
        """Completion times the depth rule ranks devices by."""
        full_depth = LoraConfig.suffix_of(list(distribution), params.num_layers)
        times = {}
        for device_id, estimate in sorted(estimates.items()):
            config = full_depth
            if (
                params.completion_reference is CompletionReference.PREVIOUS_PLAN
                and previous_plan is not None
                and device_id in previous_plan.configs
            ):
                config = previous_plan.configs[device_id]
            times[device_id] = PlannerService.predict_completion(estimate, estimate.forward_time, config)
        return times

    @staticmethod
    def configure(
        estimates: Mapping[int, CapacityEstimate],
        params: PlannerParams,
        budgets: Optional[Mapping[int, DeviceBudget]] = None,
        device_ids: Optional[Sequence[int]] = None,
        previous_plan: Optional[Plan] = None,
        adaptive_depth: bool = True,
        planner: str = PlannerKind.LEGEND.value,
    ) -> Plan:
        """
        One round of configuration planning.

        Without estimates (the first round) every device gets the full
        distribution R. `adaptive_depth=False` keeps depth L for everyone
        and only applies the budgets.
        """
        budgets = budgets or {}
        ids = sorted(device_ids if device_ids is not None else estimates)
        if not ids:
            raise PlannerError("no devices to plan for")
        distribution = PlannerService.global_rank_distribution(
            params.num_layers, params.rank_budget, params.rank_step
        )
        cold_start = not estimates
        missing = [device_id for device_id in ids if device_id not in estimates]
        if not cold_start and missing:
            raise PlannerError(f"no capacity estimate for devices {missing}")

        gap = 0
        references: Dict[int, float] = {}
        if cold_start or not adaptive_depth:
            depths = {device_id: params.num_layers for device_id in ids}
        else:
            references = PlannerService.reference_times(
                {device_id: estimates[device_id] for device_id in ids}, distribution, params, previous_plan
            )
            gap = PlannerService.depth_gap(list(references.values()), params.num_layers)
            depths = PlannerService.device_depths(references, params.num_layers, gap, params.depth_rule)

        configs: Dict[int, LoraConfig] = {}
        infeasible = []
        for device_id in ids:
            check = PlannerService.enforce_budgets(
                distribution, depths[device_id], params, budgets.get(device_id, UNLIMITED)
            )
            if not check.feasible:
                infeasible.append(device_id)
                logger.warning(f"device {device_id} cannot meet its budgets even at depth 1")
            configs[device_id] = LoraConfig.suffix_of(distribution, check.depth)

        plan = Plan(
            planner=planner,
            configs=configs,
            rank_distribution=distribution,
            depth_gap=gap,
            reference_times=references,
            infeasible_devices=infeasible,
            cold_start=cold_start,
        )
        return PlannerService.with_predictions(plan, estimates, params)

    @staticmethod
    def with_predictions(plan: Plan, estimates: Mapping[int, CapacityEstimate], params: PlannerParams) -> Plan:
        """Attach predicted completion times, round time and waiting to a plan."""
        if not estimates:
            return plan
        predicted = {
            device_id: PlannerService.predict_completion(estimates[device_id], estimates[device_id].forward_time, config)
            for device_id, config in plan.configs.items()
        }
        avg_wait = PlannerService.avg_waiting(list(predicted.values()))
        return plan.model_copy(
            update={
                "predicted_times": predicted,
                "predicted_round_time": max(predicted.values()),
                "predicted_avg_wait": avg_wait,
                "wait_violation": avg_wait > params.wait_threshold,
            }
        )

    @staticmethod
    def plan(
        kind: PlannerKind,
        estimates: Mapping[int, CapacityEstimate],
        params: PlannerParams,
        device_ids: Sequence[int],
        budgets: Optional[Mapping[int, DeviceBudget]] = None,
        previous_plan: Optional[Plan] = None,
        uniform_rank: int = 1,
        hetlora_rank_min: int = 1,
        hetlora_rank_max: int = 1,
    ) -> Plan:
        """Dispatch to LEGEND, one of its ablations, or a baseline planner."""
        label = kind.label
        if kind is PlannerKind.LEGEND:
            return PlannerService.configure(
                estimates, params, budgets, device_ids, previous_plan, planner=label
            )
        if kind is PlannerKind.LEGEND_NO_DEPTH:
            return PlannerService.configure(
                estimates, params, budgets, device_ids, previous_plan, adaptive_depth=False, planner=label
            )
        if kind is PlannerKind.LEGEND_NO_RANKDIST:
            flat = params.model_copy(update={"rank_step": 0})
            return PlannerService.configure(
                estimates, flat, budgets, device_ids, previous_plan, planner=label
            )

        if kind is PlannerKind.FEDLORA:
            configs = baseline_service.fedlora_config(params.num_layers, uniform_rank, device_ids)
            distribution = [uniform_rank] * params.num_layers
        else:
            if estimates:
                configs = baseline_service.hetlora_config(
                    {device_id: estimates[device_id] for device_id in device_ids},
                    params.num_layers,
                    hetlora_rank_min,
                    hetlora_rank_max,
                )
            else:
                configs = {
                    device_id: LoraConfig(depth=params.num_layers, ranks=[hetlora_rank_max] * params.num_layers)
                    for device_id in device_ids
                }
            distribution = [hetlora_rank_max] * params.num_layers

        # Baselines keep their configurations; budget misses are only reported.
        budgets = budgets or {}
        infeasible = []
        for device_id in sorted(configs):
            budget = budgets.get(device_id, UNLIMITED)
            compute, comm = PlannerService.slice_cost(configs[device_id].ranks, configs[device_id].depth, params)
            if compute > budget.compute or comm > budget.comm:
                infeasible.append(device_id)
        plan = Plan(
            planner=label,
            configs=configs,
            rank_distribution=distribution,
            infeasible_devices=infeasible,
            cold_start=not estimates,
        )
        return PlannerService.with_predictions(plan, estimates, params)

    @staticmethod
    def minimum_rank_budget(num_layers: int, rank_step: int) -> int:
        return num_layers + rank_step * num_layers * (num_layers - 1) // 2


def estimates_from_profiles(profiles) -> Dict[int, CapacityEstimate]:
    """Static profile rows (mu, beta, forward time) as round-0 estimates."""
    estimates = {}
    for profile in profiles:
        if profile.device_id in estimates:
            raise PlannerError(f"duplicate device_id {profile.device_id} in profile table")
        estimates[profile.device_id] = CapacityEstimate(
            device_id=profile.device_id,
            round=0,
            mu=profile.mu,
            beta=profile.beta,
            forward_time=profile.forward_time,
        )
    return estimates


def plan_static(profiles, params: PlannerParams) -> Plan:
    """One-shot LEGEND plan for a fixed profile table."""
    estimates = estimates_from_profiles(profiles)
    budgets = {profile.device_id: profile.budget() for profile in profiles}
    return PlannerService.configure(estimates, params, budgets)
