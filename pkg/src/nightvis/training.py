"""Adversarial losses, Adam, and the alternating generator/discriminator schedule."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError, StateError
from .nn import Discriminator, Generator
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class LossConfig:
    lambda1: float = 1.0  # adversarial weight
    lambda2: float = 100.0  # L1 reconstruction weight

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ConfigError(f"loss weights must be non-negative with positive sum, got {self}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def bce_loss(predicted, label: int) -> Tensor:
    """Mean binary cross-entropy against a label shared by the whole batch."""
    p = _as_tensor(predicted)
    if p.value.size == 0:
        raise ShapeError("bce_loss on an empty batch")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    if label == 1:
        return T.scale(T.mean(T.log(p)), -1.0)
    return T.scale(T.mean(T.log(T.sub(Tensor(np.ones((), dtype=p.dtype)), p))), -1.0)


def discriminator_loss(d_real, d_fake) -> Tensor:
    d_real, d_fake = _as_tensor(d_real), _as_tensor(d_fake)
    if d_real.shape[0] != d_fake.shape[0]:
        raise ShapeError(f"real batch {d_real.shape} and fake batch {d_fake.shape} differ in size")
    return T.add(bce_loss(d_real, 1), bce_loss(d_fake, 0))


def generator_loss_terms(d_fake, y_true, y_fake, cfg: LossConfig) -> tuple[Tensor, Tensor | None, Tensor]:
    """Return ``(total, adversarial, l1)``; the adversarial term is None when unweighted."""
    y_true, y_fake = _as_tensor(y_true), _as_tensor(y_fake)
    if y_true.shape != y_fake.shape:
        raise ShapeError(f"target {y_true.shape} and synthesis {y_fake.shape} differ")
    l1 = T.mean(T.abs_(T.sub(y_true, y_fake)))
    total = T.scale(l1, cfg.lambda2)
    adv = None
    if cfg.lambda1 > 0:
        adv = bce_loss(d_fake, 1)
        total = T.add(T.scale(adv, cfg.lambda1), total)
    return total, adv, l1


def generator_loss(d_fake, y_true, y_fake, cfg: LossConfig) -> Tensor:
    return generator_loss_terms(d_fake, y_true, y_fake, cfg)[0]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.value) for p in params],
            v=[np.zeros_like(p.value) for p in params],
            **hyper,
        )


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray | None]) -> None:
    """Bias-corrected Adam update, in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("Adam state, parameters and gradients must align")
    for i, g in enumerate(grads):
        if g is None:
            raise StateError(f"parameter {i} has no gradient")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.astype(p.value.dtype, copy=False)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr=1e-3, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def steps(self) -> int:
        return self.state.t

    def step(self) -> None:
        adam_step(self.state, self.params, [p.grad for p in self.params])

    def zero_grad(self) -> None:
        T.zero_grads(self.params)


# ---------------------------------------------------------------------------
# alternating schedule
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    loss_d: float
    loss_g: float
    l1: float
    d_real: float
    d_fake: float
    g_updates: int
    d_updates: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingState:
    """Everything that evolves during training and must survive a checkpoint."""

    generator: Generator
    discriminator: Discriminator
    opt_g: Adam
    opt_d: Adam
    loss: LossConfig
    rng: np.random.Generator
    batch_size: int = 8
    epoch: int = 0
    seed: int = 0

    @classmethod
    def create(
        cls,
        generator: Generator,
        discriminator: Discriminator,
        loss: LossConfig | None = None,
        lr: float = 1e-3,
        beta1: float = 0.5,
        beta2: float = 0.999,
        batch_size: int = 8,
        seed: int = 0,
    ) -> "TrainingState":
        return cls(
            generator=generator,
            discriminator=discriminator,
            opt_g=Adam(generator.parameters(), lr, beta1, beta2),
            opt_d=Adam(discriminator.parameters(), lr, beta1, beta2),
            loss=loss or LossConfig(),
            rng=np.random.default_rng(seed),
            batch_size=batch_size,
            seed=seed,
        )


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_step(state: TrainingState, xb: np.ndarray, yb: np.ndarray) -> dict[str, float]:
    """One iteration: D on a real batch, D on a generated batch, then G."""
    g, d = state.generator, state.discriminator
    g.train()
    d.train()
    fake = g(xb, state.rng)

    d.zero_grad()
    d_real = d(xb, yb)
    loss_real = bce_loss(d_real, 1)
    loss_real.backward()
    state.opt_d.step()

    d.zero_grad()
    d_fake = d(xb, fake.detach())
    loss_fake = bce_loss(d_fake, 0)
    loss_fake.backward()
    state.opt_d.step()

    g.zero_grad()
    d_on_fake = d(xb, fake) if state.loss.lambda1 > 0 else None
    total, _, l1 = generator_loss_terms(d_on_fake, yb, fake, state.loss)
    total.backward()
    state.opt_g.step()
    d.zero_grad()

    return {
        "loss_d": loss_real.item() + loss_fake.item(),
        "loss_g": total.item(),
        "l1": l1.item(),
        "d_real": float(d_real.value.mean()),
        "d_fake": float(d_fake.value.mean()),
    }


def train_epoch(state: TrainingState, x: np.ndarray, y: np.ndarray) -> EpochStats:
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(x) != len(y):
        raise ShapeError(f"{len(x)} inputs but {len(y)} targets")
    g0, d0 = state.opt_g.steps, state.opt_d.steps
    sums: dict[str, float] = {}
    batches = iterate_batches(len(x), state.batch_size, state.rng)
    for idx in batches:
        step = train_step(state, x[idx], y[idx])
        for k, v in step.items():
            sums[k] = sums.get(k, 0.0) + v
    state.epoch += 1
    n = len(batches)
    stats = EpochStats(
        epoch=state.epoch,
        g_updates=state.opt_g.steps - g0,
        d_updates=state.opt_d.steps - d0,
        **{k: v / n for k, v in sums.items()},
    )
    logger.info(
        "epoch %d  L_D=%.4f  L_G=%.4f  L1=%.4f", stats.epoch, stats.loss_d, stats.loss_g, stats.l1
    )
    return stats


def predict(generator: Generator, x: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Deterministic inference (dropout off, running normalization statistics)."""
    was_training = generator.training
    generator.eval()
    out = [generator(x[i : i + batch_size]).value for i in range(0, len(x), batch_size)]
    generator.train(was_training)
    return np.concatenate(out, axis=0)
