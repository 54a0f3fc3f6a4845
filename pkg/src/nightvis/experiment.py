"""Train/evaluate plumbing shared by the command line and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, apply_ablation, denormalize_visible
from .errors import DataError
from .metrics import MetricsReport, evaluate, mean_report
from .nn import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .training import EpochStats, LossConfig, TrainingState, predict, train_epoch

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    filters: tuple[int, ...] = (32, 64, 128, 256, 256)
    disc_filters: tuple[int, ...] = (32, 64, 128, 256)
    dropout_rate: float = 0.5
    dropout_levels: int = 3
    se_reduction: int = 4
    se_single_layer: bool = False
    noise_channel: bool = False

    def generator_config(self, in_channels: int) -> GeneratorConfig:
        return GeneratorConfig(
            in_channels,
            filters=tuple(self.filters),
            dropout_rate=self.dropout_rate,
            dropout_levels=self.dropout_levels,
            se_reduction=self.se_reduction,
            se_single_layer=self.se_single_layer,
            noise_channel=self.noise_channel,
        )

    def discriminator_config(self, in_channels: int) -> DiscriminatorConfig:
        return DiscriminatorConfig(in_channels, filters=tuple(self.disc_filters))


@dataclass
class NightSplit:
    """Day frames of the training sequences vs night frames of the held-out ones."""

    train: Dataset
    test: Dataset
    persistence: np.ndarray  # normalized last-day visible frame for every test frame


def night_split(ds: Dataset) -> NightSplit:
    recs = ds.records
    train_idx = [i for i, r in enumerate(recs) if r.get("split") == "train" and r.get("day")]
    test_idx = [i for i, r in enumerate(recs) if r.get("split") == "test" and r.get("night")]
    if not train_idx:
        raise DataError("no day frames in the training split")
    if not test_idx:
        raise DataError("no night frames in the held-out split")
    persistence = []
    for i in test_idx:
        seq, hour = recs[i].get("sequence"), recs[i].get("hour")
        prior = [j for j, r in enumerate(recs) if r.get("sequence") == seq and r.get("day") and r.get("hour") < hour]
        if not prior:
            raise DataError(f"no earlier day frame for persistence at {recs[i].get('timestamp')}")
        last = max(prior, key=lambda j: recs[j]["hour"])
        persistence.append(ds.y[last])
    return NightSplit(ds.subset(train_idx), ds.subset(test_idx), np.stack(persistence))


def build_state(n_channels: int, model: ModelConfig, loss: LossConfig, lr: float = 1e-3, beta1: float = 0.5,
                beta2: float = 0.999, batch_size: int = 8, seed: int = 0) -> TrainingState:
    g = Generator(model.generator_config(n_channels), seed=seed)
    d = Discriminator(model.discriminator_config(n_channels), seed=seed + 1)
    return TrainingState.create(g, d, loss, lr=lr, beta1=beta1, beta2=beta2, batch_size=batch_size, seed=seed)


def fit(state: TrainingState, x: np.ndarray, y: np.ndarray, epochs: int,
        on_epoch: Callable[[EpochStats], None] | None = None) -> list[EpochStats]:
    history = []
    for _ in range(epochs):
        stats = train_epoch(state, x, y)
        history.append(stats)
        if on_epoch:
            on_epoch(stats)
    return history


def score(y_true_norm: np.ndarray, y_pred_norm: np.ndarray, mask=None, region: str | None = None) -> MetricsReport:
    """Mean per-frame report in albedo units for batches of normalized visible grids."""
    reports = [
        evaluate(denormalize_visible(t), denormalize_visible(p), mask=mask, region=region)
        for t, p in zip(y_true_norm, y_pred_norm)
    ]
    return mean_report(reports)


def score_model(generator: Generator, x: np.ndarray, y_true_norm: np.ndarray, mask=None) -> MetricsReport:
    return score(y_true_norm, predict(generator, x), mask=mask)


@dataclass
class ArmResult:
    mode: str
    seed: int
    report: MetricsReport
    initial_mae: float
    history: list[EpochStats] = field(default_factory=list)
    state: TrainingState | None = None


def run_arm(split: NightSplit, mode: str, model: ModelConfig, epochs: int, seed: int, batch_size: int = 8,
            loss: LossConfig | None = None, lr: float = 1e-3) -> ArmResult:
    """Train one ablation arm from scratch and score it on the held-out night frames."""
    cats = split.train.categories
    xtr = apply_ablation(split.train.x, cats, mode)
    xte = apply_ablation(split.test.x, cats, mode)
    state = build_state(xtr.shape[1], model, loss or LossConfig(), lr=lr, batch_size=batch_size, seed=seed)
    initial = score_model(state.generator, xte, split.test.y).mae
    history = fit(state, xtr, split.train.y, epochs)
    report = score_model(state.generator, xte, split.test.y)
    logger.info("arm %s seed %d: MAE %.4f (initial %.4f)", mode, seed, report.mae, initial)
    return ArmResult(mode, seed, report, initial, history, state)


def causal_channels(categories: Sequence[str]) -> list[int]:
    return [i for i, c in enumerate(categories) if c != "noise"]
