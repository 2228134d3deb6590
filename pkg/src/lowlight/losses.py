"""Adversarial, perceptual and total objectives, plus the epoch weight schedule."""

from __future__ import annotations

from dataclasses import dataclass

from lowlight import ops
from lowlight.networks import FeatureExtractor
from lowlight.tensor import Tensor, UsageError, no_grad

WARMUP_EPOCHS = 5


@dataclass(frozen=True)
class LossWeights:
    omega1: float = 1.0
    omega2: float = 1.0


@dataclass
class LossReport:
    adv_g: float
    adv_d: float
    perc: float
    total: float
    epoch: int
    omega1: float = 1.0
    omega2: float = 1.0


def weight_schedule(epoch: int) -> LossWeights:
    """(1, 0.5) for the first five epochs (0-4), (1, 1) afterwards."""
    if epoch < 0:
        raise UsageError(f"epoch must be non-negative, got {epoch}")
    return LossWeights(1.0, 0.5) if epoch < WARMUP_EPOCHS else LossWeights(1.0, 1.0)


def adv_loss_d(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """-[E log D(real) + E log(1 - D(fake))] with D = sigmoid(logits)."""
    real_term = ops.reduce_mean(ops.log_sigmoid(real_logits))
    fake_term = ops.reduce_mean(ops.log_sigmoid(-fake_logits))
    return -(real_term + fake_term)


def adv_loss_g(fake_logits: Tensor) -> Tensor:
    """Non-saturating generator objective -E log D(fake)."""
    return -ops.reduce_mean(ops.log_sigmoid(fake_logits))


def perceptual_loss(fx: FeatureExtractor, low: Tensor, enhanced: Tensor) -> Tensor:
    """Mean absolute feature difference; the low-light branch is a constant."""
    with no_grad():
        target = fx(low.detach())
    return ops.reduce_mean(ops.abs(fx(enhanced) - target))


def total_loss(adv_g: Tensor, perc: Tensor, w: LossWeights) -> Tensor:
    if w.omega1 < 0 or w.omega2 < 0:
        raise UsageError(f"loss weights must be non-negative, got {w}")
    return adv_g * w.omega1 + perc * w.omega2
