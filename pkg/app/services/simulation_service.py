# app/services/simulation_service.py
"""Synchronous round engine.

A round is: plan, assign global layers (download), local fine-tuning on
every device, simulated completion time from this round's device
conditions, status reports into the capacity estimator, aggregation and
central evaluation. The simulated clock advances by the slowest device.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from app.models.dataset import SyntheticDataset, concatenate
from app.models.global_state import DeviceUpdate
from app.models.lora import LayerStack, LoraAdapter
from app.models.optimizer import OptimizerState
from app.models.simulation import ExperimentLog, SimulationState
from app.schemas.capacity import DeviceStatus
from app.schemas.experiment import ExperimentConfig
from app.schemas.lora import LoraConfig
from app.schemas.planner import Plan, PlannerKind, PlannerParams
from app.schemas.simulation import DeviceProfile, DeviceRoundRecord, RoundReport
from app.services import aggregation_service, lora_service, trainer_service
from app.services.capacity_service import CapacityService
from app.services.numerics import (
    CONDITIONS_STREAM_BASE,
    DATA_STREAM,
    SERVER_STREAM,
    Matrix,
    SeededRng,
    device_stream,
)
from app.services.planner_service import PlannerService
from app.utils.error_handling import ProtocolViolationError

logger = logging.getLogger(__name__)

WIRE_BYTES = 4  # float32 on the wire
BANDWIDTH_STEP_FRACTION = 0.2


def payload_bytes(
    config: LoraConfig, m: int, q: int, adapted_linears_per_block: int = 1, head_params: int = 0
) -> int:
    """Bytes of one adapter-set transfer: sum_l r_l (m + q) * linears * 4, plus the head."""
    rank_units = config.rank_sum * (m + q) * adapted_linears_per_block
    return WIRE_BYTES * (rank_units + head_params)


def bytes_per_rank_unit(m: int, q: int, adapted_linears_per_block: int) -> int:
    return WIRE_BYTES * (m + q) * adapted_linears_per_block


def completion_time(forward_time: float, depth: int, rank_sum: int, mu: float, beta: float) -> float:
    """Forward pass, truncated backward over `depth` layers, upload of `rank_sum` rank units."""
    return forward_time + depth * mu + rank_sum * beta


class TrafficMeter:
    """Counts bytes from the arrays actually handed across the wire."""

    def __init__(self, adapted_linears_per_block: int = 1):
        self.adapted_linears_per_block = adapted_linears_per_block
        self.downloaded = 0
        self.uploaded = 0

    def _size(self, adapters: Dict[int, LoraAdapter], head: Matrix) -> int:
        adapter_elements = sum(a.B.size + a.A.size for a in adapters.values())
        return WIRE_BYTES * (adapter_elements * self.adapted_linears_per_block + head.size)

    def download(self, adapters: Dict[int, LoraAdapter], head: Matrix) -> int:
        size = self._size(adapters, head)
        self.downloaded += size
        return size

    def upload(self, adapters: Dict[int, LoraAdapter], head: Matrix) -> int:
        size = self._size(adapters, head)
        self.uploaded += size
        return size

    @property
    def total(self) -> int:
        return self.downloaded + self.uploaded


@dataclass
class RoundConditions:
    multiplier: float
    bandwidth_mbps: float
    mu: float
    beta: float


@dataclass
class DeviceConditions:
    """Per-device compute mode and bandwidth walk, driven by its own random stream."""

    profile: DeviceProfile
    rng: SeededRng
    multiplier: float = 1.0
    bandwidth_mbps: Optional[float] = None

    def sample(self, round_index: int, rank_unit_bytes: int) -> RoundConditions:
        return sample_round_conditions(self, round_index, rank_unit_bytes)


def sample_round_conditions(
    conditions: DeviceConditions, round_index: int, rank_unit_bytes: int
) -> RoundConditions:
    """
    Actual per-layer compute time and per-rank-unit upload time for one round.

    The compute mode is redrawn every `mode_period` rounds; bandwidth takes
    one bounded random-walk step per round (at most 20% of the range) and is
    clamped to [lo, hi]; mu gets multiplicative noise U(-noise, noise).
    """
    profile = conditions.profile
    rng = conditions.rng
    if round_index % profile.mode_period == 0:
        conditions.multiplier = rng.choice(profile.modes)

    lo, hi = profile.bandwidth_lo, profile.bandwidth_hi
    if conditions.bandwidth_mbps is None:
        conditions.bandwidth_mbps = rng.uniform(lo, hi)
    else:
        reach = BANDWIDTH_STEP_FRACTION * (hi - lo)
        stepped = conditions.bandwidth_mbps + rng.uniform(-reach, reach)
        conditions.bandwidth_mbps = min(hi, max(lo, stepped))

    u = rng.uniform(-profile.noise, profile.noise)
    mu = profile.mu * conditions.multiplier * (1.0 + u)
    beta = rank_unit_bytes * 8 / (conditions.bandwidth_mbps * 1e6)
    return RoundConditions(conditions.multiplier, conditions.bandwidth_mbps, mu, beta)


def global_distribution(config: ExperimentConfig) -> List[int]:
    """Ranks the server keeps on each layer for the configured planner."""
    kind = config.planner.kind
    num_layers = config.model.num_layers
    if kind is PlannerKind.FEDLORA:
        return [config.uniform_rank] * num_layers
    if kind is PlannerKind.HETLORA:
        return [config.hetlora_rank_max] * num_layers
    rank_step = 0 if kind is PlannerKind.LEGEND_NO_RANKDIST else config.planner.rank_step
    return PlannerService.global_rank_distribution(num_layers, config.planner.rank_budget, rank_step)


@dataclass
class LocalResult:
    device_id: int
    stack: LayerStack
    train_loss: float


@dataclass
class RoundEngine:
    """Static experiment context: model, data, devices and the planner to drive."""

    config: ExperimentConfig
    backbone: LayerStack
    shards: Dict[int, SyntheticDataset]
    test_set: SyntheticDataset
    profiles: Dict[int, DeviceProfile]
    conditions: Dict[int, DeviceConditions]
    device_rngs: Dict[int, SeededRng]
    meter: TrafficMeter
    params: PlannerParams = field(init=False)

    def __post_init__(self) -> None:
        self.params = self.config.planner_params()

    @property
    def device_ids(self) -> List[int]:
        return sorted(self.profiles)

    @property
    def truncates(self) -> bool:
        return self.config.planner.kind is PlannerKind.HETLORA

    def new_optimizer(self) -> OptimizerState:
        training = self.config.training
        return OptimizerState(
            kind=training.optimizer,
            base_lr=training.lr,
            beta1=training.beta1,
            beta2=training.beta2,
            eps=training.eps,
            weight_decay=training.weight_decay,
        )

    def lr_for(self, round_index: int) -> float:
        return trainer_service.cosine_lr(self.config.training.lr, round_index, self.config.rounds)

    def _train(self, device_id: int, stack: LayerStack, optimizer: OptimizerState, lr: float) -> LocalResult:
        shard = self.shards[device_id]
        training = self.config.training
        steps = training.local_epochs * trainer_service.steps_per_epoch(shard, training.batch_size)
        trained, loss = trainer_service.local_finetune(
            stack, shard, optimizer, self.device_rngs[device_id],
            steps=steps, lr=lr, batch_size=training.batch_size,
        )
        return LocalResult(device_id, trained, loss)

    def simulate_round(self, state: SimulationState) -> Tuple[SimulationState, RoundReport, Plan]:
        h = state.round_index
        model = self.config.model
        plan = PlannerService.plan(
            self.config.planner.kind,
            state.estimates,
            self.params,
            self.device_ids,
            budgets={d: profile.budget() for d, profile in self.profiles.items()},
            previous_plan=state.previous_plan,
            uniform_rank=self.config.uniform_rank,
            hetlora_rank_min=self.config.planner.hetlora_rank_min,
            hetlora_rank_max=self.config.hetlora_rank_max,
        )
        for device_id in plan.infeasible_devices:
            logger.warning(f"round {h}: device {device_id} exceeds its budgets at the smallest configuration")

        # Download: each device receives its slice of the global layers and the head.
        stacks: Dict[int, LayerStack] = {}
        down: Dict[int, int] = {}
        for device_id in self.device_ids:
            stack = aggregation_service.device_stack(
                self.backbone, state.global_state, plan.configs[device_id], self.truncates
            )
            stacks[device_id] = stack
            down[device_id] = self.meter.download(stack.adapters, stack.head)

        # Conditions are drawn before training so they never depend on thread scheduling.
        rank_unit = bytes_per_rank_unit(model.dim, model.dim, model.adapted_linears_per_block)
        actual = {d: self.conditions[d].sample(h, rank_unit) for d in self.device_ids}

        optimizers = dict(state.optimizers)
        for device_id in self.device_ids:
            if self.config.training.reset_optimizer or device_id not in optimizers:
                optimizers[device_id] = self.new_optimizer()
        lr = self.lr_for(h)
        results = self._run_devices(stacks, optimizers, lr)

        records, updates, reports = [], [], []
        head_params = self.backbone.head.size
        for result in results:
            device_id = result.device_id
            config = plan.configs[device_id]
            conditions = actual[device_id]
            profile = self.profiles[device_id]
            t_i = completion_time(profile.forward_time, config.depth, config.rank_sum, conditions.mu, conditions.beta)
            up = self.meter.upload(result.stack.adapters, result.stack.head)
            formula = payload_bytes(config, model.dim, model.dim, model.adapted_linears_per_block, head_params)
            records.append(
                DeviceRoundRecord(
                    device_id=device_id,
                    depth=config.depth,
                    rank_sum=config.rank_sum,
                    completion_time=t_i,
                    up_bytes=formula,
                    down_bytes=formula,
                    mu_actual=conditions.mu,
                    beta_actual=conditions.beta,
                    train_loss=result.train_loss,
                )
            )
            if up != formula or down[device_id] != formula:
                raise ProtocolViolationError(
                    f"round {h}: device {device_id} metered {up}/{down[device_id]} bytes, expected {formula}"
                )
            updates.append(DeviceUpdate(device_id, dict(result.stack.adapters), result.stack.head))
            reports.append(
                DeviceStatus(
                    device_id=device_id,
                    round=h,
                    mu_hat=conditions.mu,
                    beta_hat=conditions.beta,
                    forward_time=profile.forward_time,
                )
            )

        estimates = CapacityService.update_all(state.estimates, reports, self.config.planner.rho)
        if self.truncates:
            global_state = aggregation_service.hetlora_pad_aggregate(state.global_state, updates)
        else:
            global_state = aggregation_service.layerwise_aggregate(state.global_state, updates)
        eval_loss, eval_acc = trainer_service.evaluate(
            aggregation_service.global_stack(self.backbone, global_state), self.test_set
        )

        times = [record.completion_time for record in records]
        round_time = max(times)
        avg_wait = PlannerService.avg_waiting(times)
        round_bytes = sum(record.up_bytes + record.down_bytes for record in records)
        report = RoundReport(
            round=h,
            planner=plan.planner,
            devices=records,
            round_time=round_time,
            avg_wait=avg_wait,
            wait_violation=avg_wait > self.params.wait_threshold,
            eval_loss=eval_loss,
            eval_acc=eval_acc,
            cum_time=state.cum_time + round_time,
            cum_bytes=state.cum_bytes + round_bytes,
        )
        if report.wait_violation:
            logger.warning(f"round {h}: average waiting {avg_wait:.3f}s exceeds {self.params.wait_threshold}s")
        logger.info(
            f"round {h} [{plan.planner}]: t={round_time:.3f}s wait={avg_wait:.3f}s "
            f"acc={eval_acc:.3f} loss={eval_loss:.4f}"
        )

        next_state = SimulationState(
            round_index=h + 1,
            global_state=global_state,
            estimates=estimates,
            previous_plan=plan,
            optimizers=optimizers,
            cum_time=report.cum_time,
            cum_bytes=report.cum_bytes,
        )
        return next_state, report, plan

    def _run_devices(
        self, stacks: Dict[int, LayerStack], optimizers: Dict[int, OptimizerState], lr: float
    ) -> List[LocalResult]:
        workers = self.config.training.workers
        jobs = [(d, stacks[d], optimizers[d], lr) for d in self.device_ids]
        if workers <= 1:
            return [self._train(*job) for job in jobs]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda job: self._train(*job), jobs))


def build_engine(config: ExperimentConfig) -> Tuple[RoundEngine, SimulationState]:
    """Backbone, data, shards and device streams for one experiment, all derived from the seed."""
    model, data = config.model, config.data
    server_rng = SeededRng(config.seed, SERVER_STREAM)
    data_rng = SeededRng(config.seed, DATA_STREAM)

    backbone = lora_service.build_backbone(
        server_rng, model.num_layers, model.dim, data.num_classes,
        activation=model.activation, gain=model.backbone_gain, head_std=model.head_std,
    )
    dataset = trainer_service.make_synthetic(
        data_rng, data.train_samples + data.test_samples, model.dim, data.num_classes,
        separation=data.separation, noise_std=data.noise_std,
    )
    train_set, test_set = dataset.split(data.train_samples)

    profiles = {profile.device_id: profile for profile in config.devices.resolve_profiles()}
    ids = sorted(profiles)
    shards = dict(zip(ids, trainer_service.dirichlet_partition(data_rng, train_set, len(ids), data.alpha)))
    conditions = {
        d: DeviceConditions(profiles[d], SeededRng(config.seed, CONDITIONS_STREAM_BASE + d)) for d in ids
    }
    device_rngs = {d: SeededRng(config.seed, device_stream(d)) for d in ids}

    global_state = aggregation_service.init_global_state(
        server_rng, backbone, global_distribution(config), model.adapter_std
    )
    engine = RoundEngine(
        config=config,
        backbone=backbone,
        shards=shards,
        test_set=test_set,
        profiles=profiles,
        conditions=conditions,
        device_rngs=device_rngs,
        meter=TrafficMeter(model.adapted_linears_per_block),
    )
    return engine, SimulationState(round_index=0, global_state=global_state)


def run_experiment(config: ExperimentConfig) -> ExperimentLog:
    engine, state = build_engine(config)
    log = ExperimentLog(planner=config.planner.kind.label)
    logger.info(
        f"running {config.rounds} rounds of {log.planner} on {len(engine.device_ids)} devices (seed {config.seed})"
    )
    for _ in range(config.rounds):
        state, report, plan = engine.simulate_round(state)
        log.reports.append(report)
        log.plans.append(plan)

    train_union = concatenate(engine.shards[d] for d in engine.device_ids)
    log.final_train_loss, log.final_train_acc = trainer_service.evaluate(
        aggregation_service.global_stack(engine.backbone, state.global_state), train_union
    )
    log.metered_bytes = engine.meter.total
    return log


def run_many(config: ExperimentConfig, kinds: Sequence[PlannerKind]) -> Dict[PlannerKind, ExperimentLog]:
    """Same seed, data and devices under each planner kind."""
    logs = {}
    for kind in kinds:
        variant = config.model_copy(update={"planner": config.planner.model_copy(update={"kind": kind})})
        logs[kind] = run_experiment(variant)
    return logs
