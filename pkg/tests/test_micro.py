# tests/test_micro.py
from dataclasses import replace

from app.services.micro_service import (
    QUALITATIVE_HEADER,
    MicroRunner,
    MicroSettings,
    MicroStudy,
    batch_latency,
    increasing_distribution,
    micro_csv,
    position_windows,
    random_distribution,
    rank_distributions,
    run_micro,
)
from app.services.numerics import SeededRng

FAST = MicroSettings(num_layers=4, train_samples=40, test_samples=20, epochs=1)


def test_position_windows():
    windows = position_windows(12)
    assert windows["Layers-A"] == range(0, 12)
    assert windows["Layers-S"] == range(0, 4)
    assert windows["Layers-M"] == range(4, 8)
    assert windows["Layers-D"] == range(8, 12)


def test_latency_grows_with_depth():
    settings = MicroSettings()
    latencies = [batch_latency(settings, 12, 12 - k) for k in range(1, 13)]
    assert all(a < b for a, b in zip(latencies, latencies[1:]))


def test_depth_study_latency_is_strictly_increasing():
    results = run_micro(MicroStudy.DEPTH, seed=0, settings=FAST)
    assert [result.variant for result in results] == ["k=1", "k=2", "k=3", "k=4"]
    latencies = [result.latency for result in results]
    assert all(a < b for a, b in zip(latencies, latencies[1:]))


def test_rank_distributions_share_the_budget():
    settings = MicroSettings()
    distributions = rank_distributions(settings, SeededRng(0, 3_000_000))
    assert {name: sum(ranks) for name, ranks in distributions.items()} == {
        "Inc": 96, "Dec": 96, "Avg": 96, "Rand": 96,
    }
    inc = distributions["Inc"]
    assert all(a <= b for a, b in zip(inc, inc[1:]))
    assert distributions["Dec"] == inc[::-1]
    assert distributions["Avg"] == [8] * 12
    assert max(distributions["Rand"]) <= settings.dim
    assert min(distributions["Rand"]) >= 1


def test_increasing_distribution_gives_the_remainder_to_deep_layers():
    assert increasing_distribution(4, 12, 1) == [1, 2, 4, 5]


def test_random_distribution_is_seeded():
    first = random_distribution(SeededRng(4, 9), 6, 30, 8)
    assert first == random_distribution(SeededRng(4, 9), 6, 30, 8)
    assert sum(first) == 30


def test_deep_adapters_beat_shallow_ones():
    wins = 0
    for seed in range(3):
        results = {result.variant: result for result in MicroRunner(seed).position()}
        wins += results["Layers-D"].final_loss <= results["Layers-S"].final_loss
    assert wins >= 2


def test_micro_csv_is_marked_qualitative():
    results = run_micro(MicroStudy.RANKDIST, seed=1, settings=replace(FAST, rank_budget=16))
    text = micro_csv(results)
    assert text.splitlines()[0] == QUALITATIVE_HEADER
    assert text.splitlines()[1].startswith("study,variant,layers")
    assert len(text.splitlines()) == 2 + 4
