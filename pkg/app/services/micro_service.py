# app/services/micro_service.py
"""Single-model micro-studies of adapter placement, depth and rank distribution.

Every variant fine-tunes the same frozen backbone and frozen head on the
same synthetic task and reports its final loss, accuracy and a simulated
per-batch latency (forward cost plus a fixed cost per backpropagated layer).
Results are qualitative; the absolute numbers mean nothing outside this toy.
"""
import enum
import logging
from dataclasses import dataclass
from typing import Dict, List

import numpy as np
import pandas as pd

from app.models.lora import Activation
from app.models.optimizer import OptimizerKind, OptimizerState
from app.services import lora_service, trainer_service
from app.services.export_service import to_csv_text
from app.services.numerics import DATA_STREAM, SERVER_STREAM, SeededRng
from app.services.planner_service import PlannerService

logger = logging.getLogger(__name__)

MICRO_STREAM_BASE = 3_000_000
QUALITATIVE_HEADER = "# qualitative micro-study on a synthetic task; compare variants, not absolute values"
MICRO_COLUMNS = ["study", "variant", "layers", "ranks", "rank_sum", "final_loss", "final_acc", "latency_s"]


class MicroStudy(str, enum.Enum):
    POSITION = "position"
    DEPTH = "depth"
    RANKDIST = "rankdist"


@dataclass(frozen=True)
class MicroSettings:
    num_layers: int = 12
    dim: int = 16
    num_classes: int = 4
    train_samples: int = 400
    test_samples: int = 200
    batch_size: int = 16
    epochs: int = 3
    lr: float = 0.01
    rank: int = 4
    rank_budget: int = 96
    rank_step: int = 1
    forward_latency: float = 0.02
    layer_latency: float = 0.005


@dataclass
class MicroResult:
    study: str
    variant: str
    ranks: Dict[int, int]
    final_loss: float
    final_acc: float
    latency: float

    def row(self) -> dict:
        layers = sorted(self.ranks)
        return {
            "study": self.study,
            "variant": self.variant,
            "layers": f"{layers[0]}-{layers[-1]}",
            "ranks": " ".join(str(self.ranks[index]) for index in layers),
            "rank_sum": sum(self.ranks.values()),
            "final_loss": self.final_loss,
            "final_acc": self.final_acc,
            "latency_s": self.latency,
        }


def batch_latency(settings: MicroSettings, num_layers: int, lowest_adapted: int) -> float:
    """Forward cost plus backpropagation through every layer from the top down to the lowest adapter."""
    return settings.forward_latency + (num_layers - lowest_adapted) * settings.layer_latency


def position_windows(num_layers: int) -> Dict[str, range]:
    """Layers-A (all), -S (shallow), -M (middle) and -D (deep) thirds as contiguous windows."""
    width = max(1, num_layers // 3)
    middle = max(0, (num_layers - width) // 2)
    return {
        "Layers-A": range(0, num_layers),
        "Layers-S": range(0, width),
        "Layers-M": range(middle, middle + width),
        "Layers-D": range(num_layers - width, num_layers),
    }


def increasing_distribution(num_layers: int, rank_budget: int, rank_step: int) -> List[int]:
    """Arithmetic distribution with the unused remainder handed one unit at a time to the deepest layers."""
    ranks = PlannerService.global_rank_distribution(num_layers, rank_budget, rank_step)
    remainder = rank_budget - sum(ranks)
    for offset in range(remainder):
        ranks[num_layers - 1 - offset % num_layers] += 1
    return ranks


def random_distribution(rng: SeededRng, num_layers: int, rank_budget: int, cap: int) -> List[int]:
    """Every layer gets at least 1; the rest is spread uniformly at random, redrawn until all ranks fit `cap`."""
    if rank_budget > num_layers * cap:
        raise ValueError(f"budget {rank_budget} cannot fit {num_layers} layers of rank <= {cap}")
    while True:
        extra = rng.multinomial(rank_budget - num_layers, [1.0 / num_layers] * num_layers)
        ranks = [1 + int(value) for value in extra]
        if max(ranks) <= cap:
            return ranks


def rank_distributions(settings: MicroSettings, rng: SeededRng) -> Dict[str, List[int]]:
    inc = increasing_distribution(settings.num_layers, settings.rank_budget, settings.rank_step)
    return {
        "Inc": inc,
        "Dec": list(reversed(inc)),
        "Avg": [settings.rank_budget // settings.num_layers] * settings.num_layers,
        "Rand": random_distribution(rng, settings.num_layers, settings.rank_budget, settings.dim),
    }


class MicroRunner:
    """Shared backbone, frozen head and data for all variants of one seed."""

    def __init__(self, seed: int, settings: MicroSettings = MicroSettings()):
        self.seed = seed
        self.settings = settings
        server_rng = SeededRng(seed, SERVER_STREAM)
        self.backbone = lora_service.build_backbone(
            server_rng, settings.num_layers, settings.dim, settings.num_classes,
            activation=Activation.TANH, head_std=1.0 / np.sqrt(settings.dim),
        )
        data = trainer_service.make_synthetic(
            SeededRng(seed, DATA_STREAM),
            settings.train_samples + settings.test_samples,
            settings.dim,
            settings.num_classes,
        )
        self.train_set, self.test_set = data.split(settings.train_samples)
        self._variants = 0

    def _stream(self) -> SeededRng:
        self._variants += 1
        return SeededRng(self.seed, MICRO_STREAM_BASE + self._variants)

    def run_variant(self, study: MicroStudy, variant: str, ranks: Dict[int, int]) -> MicroResult:
        settings = self.settings
        rng = self._stream()
        stack = lora_service.inject_ranks(self.backbone, ranks, rng)
        optimizer = OptimizerState(kind=OptimizerKind.ADAMW, base_lr=settings.lr)
        steps = settings.epochs * trainer_service.steps_per_epoch(self.train_set, settings.batch_size)
        trained, _ = trainer_service.local_finetune(
            stack, self.train_set, optimizer, rng,
            steps=steps, lr=settings.lr, batch_size=settings.batch_size, train_head=False,
        )
        final_loss, _ = trainer_service.evaluate(trained, self.train_set)
        _, final_acc = trainer_service.evaluate(trained, self.test_set)
        latency = batch_latency(settings, trained.num_layers, trained.lowest_adapted)
        logger.debug(f"{study.value}/{variant}: loss {final_loss:.4f} acc {final_acc:.3f}")
        return MicroResult(study.value, variant, dict(ranks), final_loss, final_acc, latency)

    def position(self) -> List[MicroResult]:
        return [
            self.run_variant(MicroStudy.POSITION, name, {index: self.settings.rank for index in window})
            for name, window in position_windows(self.settings.num_layers).items()
        ]

    def depth(self) -> List[MicroResult]:
        num_layers = self.settings.num_layers
        return [
            self.run_variant(
                MicroStudy.DEPTH, f"k={k}", {index: self.settings.rank for index in range(num_layers - k, num_layers)}
            )
            for k in range(1, num_layers + 1)
        ]

    def rankdist(self) -> List[MicroResult]:
        distributions = rank_distributions(self.settings, SeededRng(self.seed, MICRO_STREAM_BASE))
        return [
            self.run_variant(MicroStudy.RANKDIST, name, dict(enumerate(ranks)))
            for name, ranks in distributions.items()
        ]

    def run(self, study: MicroStudy) -> List[MicroResult]:
        return {
            MicroStudy.POSITION: self.position,
            MicroStudy.DEPTH: self.depth,
            MicroStudy.RANKDIST: self.rankdist,
        }[study]()


def run_micro(study: MicroStudy, seed: int = 0, settings: MicroSettings = MicroSettings()) -> List[MicroResult]:
    logger.info(f"micro-study {study.value} (seed {seed})")
    return MicroRunner(seed, settings).run(study)


def micro_frame(results: List[MicroResult]) -> pd.DataFrame:
    return pd.DataFrame([result.row() for result in results], columns=MICRO_COLUMNS)


def micro_csv(results: List[MicroResult]) -> str:
    return QUALITATIVE_HEADER + "\n" + to_csv_text(micro_frame(results))
