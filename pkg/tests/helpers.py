import numpy as np

from lowlight import ops
from lowlight.losses import LossWeights, adv_loss_g, perceptual_loss, total_loss
from lowlight.networks import Discriminator, FeatureExtractor, Generator
from lowlight.tensor import Tensor


def randomize_zero_heads(gen: Generator, rng: np.random.Generator, scale: float = 0.05) -> Generator:
    """Give the zero-initialized CIN heads and output head nonzero weights."""
    convs = [block.cin.head for block in gen.decoder] + [gen.head]
    for conv in convs:
        conv.weight.data = rng.uniform(-scale, scale, conv.weight.shape).astype(conv.weight.data.dtype)
        conv.bias.data = rng.uniform(-scale, scale, conv.bias.shape).astype(conv.bias.data.dtype)
    return gen


def float64_models(seed: int = 0):
    rng = np.random.default_rng(seed)
    gen = randomize_zero_heads(Generator(rng), rng).astype(np.float64)
    disc = Discriminator(rng).astype(np.float64)
    fx = FeatureExtractor(seed).astype(np.float64)
    return gen, disc, fx


def generator_total_loss(gen, disc, fx, low: Tensor, w: LossWeights = LossWeights(1.0, 1.0)) -> Tensor:
    _, _, fake = gen(low)
    return total_loss(adv_loss_g(disc(fake)), perceptual_loss(fx, low, fake), w)


def low_light_batch(rng, shape, scale=0.25, dtype=np.float32) -> Tensor:
    return Tensor(rng.uniform(0, scale, shape), dtype=dtype)


__all__ = ["float64_models", "generator_total_loss", "low_light_batch", "ops", "randomize_zero_heads"]
