"""Desk-scale experiment drivers shared by scripts/ and the acceptance suite.

``stage_ablation`` compares mean last-epoch PMR across cascade depths on
the complementary-views synthetic data. ``progressive_vs_fixed`` compares
held-out R@1 after a growing final Top-k schedule against a fixed one with
the same number of epochs.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

from cpr.miner import CascadeConfig
from cpr.pipeline import run_training
from cpr.synthetic import SyntheticSpec, generate_holdout, generate_synthetic
from cpr.trainer import CycleSpec, TrainSchedule


@dataclass
class StageAblation:
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)
    stages: tuple[int, ...] = (1, 3, 7)
    selection_ratio: float = 0.5
    final_topk: int = 5
    epochs: int = 3
    learning_rate: float = 0.5
    ema_momentum: float = 0.99
    bank_capacity: int = 180
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


def stage_ablation(setup: StageAblation) -> dict[int, list[float]]:
    """Mean last-epoch PMR per seed, keyed by number of cascade stages."""
    out: dict[int, list[float]] = {n: [] for n in setup.stages}
    for seed in setup.seeds:
        ds = generate_synthetic(setup.spec, seed)
        sched = TrainSchedule(
            cycles=(CycleSpec(setup.epochs, setup.final_topk),),
            learning_rate=setup.learning_rate,
            ema_momentum=setup.ema_momentum,
            bank_capacity=setup.bank_capacity,
            seed=seed,
        )
        for n in setup.stages:
            cfg = CascadeConfig(n, setup.selection_ratio, setup.final_topk)
            _, report, _ = run_training(ds, cfg, sched)
            out[n].append(report.pmr_series[-1])
    return out


@dataclass
class ProgressiveSetup:
    # Two close-but-distinct prototypes per confusable pair, heavy noise.
    spec: SyntheticSpec = field(
        default_factory=lambda: SyntheticSpec(noise_scale=2.0, confused_offset=1.0)
    )
    holdout_per_class: int = 30
    num_stages: int = 3
    selection_ratio: float = 0.5
    progressive_topk: tuple[int, ...] = (1, 2, 3, 4, 5)
    fixed_topk: int = 5
    epochs_per_cycle: int = 4
    learning_rate: float = 5.0
    temperature: float = 0.2
    aug_noise: float = 0.1
    ema_momentum: float = 0.99
    encoder_init: str = "random"
    train_view: str = "rgb"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


def _arm(setup: ProgressiveSetup, topks: Sequence[int], seed: int, train_ds, test_ds) -> float:
    sched = TrainSchedule(
        cycles=tuple(CycleSpec(setup.epochs_per_cycle, k, setup.train_view) for k in topks),
        learning_rate=setup.learning_rate,
        temperature=setup.temperature,
        aug_noise=setup.aug_noise,
        ema_momentum=setup.ema_momentum,
        bank_capacity=len(train_ds),
        encoder_init=setup.encoder_init,
        seed=seed,
    )
    cfg = CascadeConfig(setup.num_stages, setup.selection_ratio)
    _, report, _ = run_training(train_ds, cfg, sched, test_ds, ks=(1,), eval_view=setup.train_view)
    return report.retrieval_recalls[1]


def progressive_vs_fixed(setup: ProgressiveSetup) -> dict[str, list[float]]:
    """Held-out R@1 per seed for the progressive and fixed Top-k arms."""
    out: dict[str, list[float]] = {"progressive": [], "fixed": []}
    n_cycles = len(setup.progressive_topk)
    for seed in setup.seeds:
        train_ds = generate_synthetic(setup.spec, seed)
        test_ds = generate_holdout(setup.spec, seed, setup.holdout_per_class)
        out["progressive"].append(_arm(setup, setup.progressive_topk, seed, train_ds, test_ds))
        out["fixed"].append(_arm(setup, (setup.fixed_topk,) * n_cycles, seed, train_ds, test_ds))
    return out
