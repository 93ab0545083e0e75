"""The synthetic adaptation benchmark: full method vs self-training-only vs
source-only on the default shifted domain pair.

Three training variants share each seed's generated domain pair:
  full          - everything on (contrastive alignment + target CE + source CE)
  self_training - lambda_contrast = 0 (teacher-pseudo-label CE only)
  source_only   - additionally no target CE (no target losses at all)

The quality gate is the ordering of the median target accuracies over the
seeds: full > self_training > source_only. The pinned margins from the runs
recorded in benchmarks/results.json are full - self_training ~ +0.024 and
self_training - source_only ~ +0.061 in median target accuracy.
"""
from __future__ import annotations

import dataclasses
import time

import numpy as np

from .config import TrainConfig
from .data import DomainSpec, generate_domain_pair
from .pipeline import evaluate, train

BENCHMARK_SEEDS = (0, 1, 2, 3, 4)
VARIANTS = ("full", "self_training", "source_only")


def benchmark_domain_spec(seed: int) -> DomainSpec:
    """Default spec: C=3, 2-D, 2 modes/class, 30 degree rotation,
    (1.5, 0) translation, target label shift (0.2, 0.3, 0.5), 5000/domain."""
    return DomainSpec(n_samples=5000, seed=seed)


def benchmark_train_config(seed: int, variant: str = "full") -> TrainConfig:
    """The pinned desk-scale training config for the benchmark."""
    cfg = TrainConfig(
        n_iter=3000,
        iter_dist=300,
        batch_source=32,
        batch_target=32,
        encoder_hidden=(64, 64),
        proj_hidden=64,
        proj_dim=8,
        n_components=3,
        sinkhorn_iters=10,
        gmm_momentum=0.99,
        source_memory_capacity=256,
        target_bank_capacity=256,
        target_bank_top_k=16,
        tau=0.1,
        beta_conf=0.968,
        lambda_contrast=1.0,
        lr=5e-4,
        warmup_iters=100,
        seed=seed,
    )
    if variant == "full":
        return cfg
    if variant == "self_training":
        return dataclasses.replace(cfg, lambda_contrast=0.0)
    if variant == "source_only":
        return dataclasses.replace(cfg, lambda_contrast=0.0, use_target_ce=False)
    raise ValueError(f"unknown variant {variant!r}")


def run_variant(seed: int, variant: str, n_iter: int | None = None) -> float:
    """Train one variant on one seed's domain pair; returns target accuracy."""
    source, target = generate_domain_pair(benchmark_domain_spec(seed))
    cfg = benchmark_train_config(seed, variant)
    if n_iter is not None:
        cfg = dataclasses.replace(cfg, n_iter=n_iter, iter_dist=n_iter // 10)
    state, _ = train(cfg, source, target)
    return float(evaluate(state, target.inputs, target.labels, predictor="head").accuracy)


def run_benchmark(seeds: tuple[int, ...] = BENCHMARK_SEEDS, n_iter: int | None = None) -> dict:
    """All variants over all seeds; returns accuracies, medians, and ordering."""
    started = time.time()
    accuracies = {v: [] for v in VARIANTS}
    for variant in VARIANTS:
        for seed in seeds:
            accuracies[variant].append(run_variant(seed, variant, n_iter=n_iter))
    medians = {v: float(np.median(accuracies[v])) for v in VARIANTS}
    return {
        "seeds": list(seeds),
        "n_iter": n_iter if n_iter is not None else benchmark_train_config(0).n_iter,
        "accuracies": accuracies,
        "medians": medians,
        "margins": {
            "full_minus_self_training": medians["full"] - medians["self_training"],
            "self_training_minus_source_only": medians["self_training"] - medians["source_only"],
        },
        "ordering_holds": medians["full"] > medians["self_training"] > medians["source_only"],
        "runtime_seconds": time.time() - started,
    }
