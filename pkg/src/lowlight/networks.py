"""Two-stage enhancement network, patch discriminator and feature extractor.

Stage I (:class:`PamNet`) predicts a per-pixel amplification ``A`` in
``[1, a_max]`` and forms ``I_pam = I_l * A``. Stage II (:class:`Generator`)
is a UNet that sees ``I_l || I_pam || I_i``; its encoder uses plain instance
norm and records per-level statistics, its decoder replaces instance norm
with CIN, whose per-pixel scale/shift come from those statistics and the
illumination map. The UNet emits a residual added back onto ``I_l``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lowlight import ops
from lowlight.nn import Conv2d, Module
from lowlight.tensor import ShapeError, Tensor, UsageError, no_grad

ENCODER_WIDTHS = (32, 64, 128, 256)
DECODER_WIDTHS = (128, 64, 32, 32)  # decoder levels 4, 3, 2, 1
NORM_EPS = 1e-5


def illumination_map(image: Tensor) -> Tensor:
    """Per-pixel max over RGB, shape N x 1 x H x W."""
    if image.data.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"illumination_map expects N x 3 x H x W, got {image.shape}")
    return ops.channel_max(image)


def amplify(image: Tensor, s: Tensor, a_max: float) -> tuple[Tensor, Tensor]:
    """Map a sigmoid output ``s`` to ``A = 1 + (a_max - 1) s`` and apply it."""
    amp = ops.affine(s, a_max - 1.0, 1.0)
    return amp, ops.mul(image, amp)


class PamNet(Module):
    """Three 3x3 convs (32, 32, 1) on ``I_l || I_i``: ReLU, ReLU, sigmoid."""

    def __init__(self, rng: np.random.Generator, a_max: float = 10.0):
        if a_max <= 1:
            raise UsageError(f"a_max must exceed 1, got {a_max}")
        self.conv1 = Conv2d(4, 32, rng=rng)
        self.conv2 = Conv2d(32, 32, rng=rng)
        self.conv3 = Conv2d(32, 1, rng=rng)
        self.a_max = float(a_max)

    def forward(self, image: Tensor, illum: Tensor) -> tuple[Tensor, Tensor]:
        h = ops.relu(self.conv1(ops.concat_channels([image, illum])))
        h = ops.relu(self.conv2(h))
        s = ops.sigmoid(self.conv3(h))
        return amplify(image, s, self.a_max)


@dataclass
class EncoderLevelStats:
    """Per-level (mean, var), each N x C, recorded at the encoder instance norms."""

    means: list[Tensor]
    variances: list[Tensor]

    def __len__(self) -> int:
        return len(self.means)

    def level(self, index: int) -> tuple[Tensor, Tensor]:
        if not 1 <= index <= len(self.means):
            raise UsageError(f"encoder level must be in 1..{len(self.means)}, got {index}")
        return self.means[index - 1], self.variances[index - 1]


class EncoderBlock(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.conv = Conv2d(cin, cout, rng=rng)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        h = ops.relu(self.conv(x))
        mean, var = ops.instance_stats(h)
        c = h.shape[1]
        ones = Tensor(np.ones(c), dtype=h.dtype)
        zeros = Tensor(np.zeros(c), dtype=h.dtype)
        h = ops.normalize_affine(h, mean, var, ones, zeros, NORM_EPS)
        return ops.maxpool2(h), mean, var


class CIN(Module):
    """Instance-normalize decoder features, then modulate them per pixel.

    A zero-initialized 1x1 conv reads the encoder statistics of one level
    (broadcast over the grid) next to the illumination map at the same scale
    and emits ``(raw_gamma, beta)``; the scale is ``1 + raw_gamma`` so a fresh
    layer is plain instance norm.
    """

    def __init__(self, stats_channels: int, channels: int):
        self.head = Conv2d(2 * stats_channels + 1, 2 * channels, kernel_size=1, padding=0, zero_init=True)
        self.channels = channels

    def modulation(self, mean: Tensor, var: Tensor, illum_scaled: Tensor) -> tuple[Tensor, Tensor]:
        _, _, h, w = illum_scaled.shape
        ctx = ops.concat_channels(
            [ops.broadcast_spatial(mean, h, w), ops.broadcast_spatial(var, h, w), illum_scaled]
        )
        raw = self.head(ctx)
        c = self.channels
        gamma = ops.affine(ops.channel_slice(raw, 0, c), 1.0, 1.0)
        beta = ops.channel_slice(raw, c, 2 * c)
        return gamma, beta

    def forward(self, feat: Tensor, mean: Tensor, var: Tensor, illum_scaled: Tensor) -> Tensor:
        if illum_scaled.shape[2:] != feat.shape[2:]:
            raise ShapeError(f"CIN: illumination {illum_scaled.shape} does not match features {feat.shape}")
        gamma, beta = self.modulation(mean, var, illum_scaled)
        fmean, fvar = ops.instance_stats(feat)
        return ops.normalize_affine(feat, fmean, fvar, gamma, beta, NORM_EPS)


class DecoderBlock(Module):
    def __init__(self, cin: int, cout: int, stats_channels: int, rng: np.random.Generator):
        self.conv = Conv2d(cin, cout, rng=rng)
        self.cin = CIN(stats_channels, cout)

    def forward(self, x: Tensor, mean: Tensor, var: Tensor, illum_scaled: Tensor) -> Tensor:
        h = ops.relu(ops.upsample2(self.conv(x)))
        return self.cin(h, mean, var, illum_scaled)


class Generator(Module):
    """Stage I amplifier plus the Stage II CIN-UNet; maps ``I_l`` to ``I_hat_c``."""

    def __init__(self, rng: np.random.Generator, a_max: float = 10.0):
        self.pam = PamNet(rng, a_max)
        widths = (7,) + ENCODER_WIDTHS
        self.encoder = [EncoderBlock(widths[i], widths[i + 1], rng) for i in range(4)]
        # decoder[0] is level 4 (coarsest); inputs after the first carry the skip concat
        self.decoder = []
        cin = ENCODER_WIDTHS[3]
        for k, level in enumerate((4, 3, 2, 1)):
            cout = DECODER_WIDTHS[k]
            self.decoder.append(DecoderBlock(cin, cout, ENCODER_WIDTHS[level - 1], rng))
            cin = cout + (ENCODER_WIDTHS[level - 2] if level > 1 else 0)
        self.head = Conv2d(DECODER_WIDTHS[-1], 3, zero_init=True)

    @property
    def a_max(self) -> float:
        return self.pam.a_max

    def encode(self, x: Tensor) -> tuple[list[Tensor], EncoderLevelStats]:
        _, c, h, w = x.shape
        if c != 7:
            raise ShapeError(f"encoder expects 7 input channels, got {c}")
        if h % 16 or w % 16:
            raise ShapeError(f"encoder needs H and W divisible by 16, got {h}x{w}")
        feats, means, variances = [], [], []
        for block in self.encoder:
            x, mean, var = block(x)
            feats.append(x)
            means.append(mean)
            variances.append(var)
        return feats, EncoderLevelStats(means, variances)

    def cin_forward(self, level: int, feat: Tensor, stats: EncoderLevelStats, illum_scaled: Tensor) -> Tensor:
        mean, var = stats.level(level)
        return self.decoder[4 - level].cin(feat, mean, var, illum_scaled)

    def decode(self, feats: list[Tensor], stats: EncoderLevelStats, illum: Tensor) -> Tensor:
        full = illum.shape[2]
        x = feats[3]
        for k, level in enumerate((4, 3, 2, 1)):
            block = self.decoder[k]
            out_size = x.shape[2] * 2
            scaled = ops.avgpool(illum, full // out_size)
            mean, var = stats.level(level)
            x = block(x, mean, var, scaled)
            if level > 1:
                x = ops.concat_channels([x, feats[level - 2]])
        return self.head(x)

    def forward(self, image: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns ``(I_pam, I_res, I_hat_c)``."""
        illum = illumination_map(image)
        _, i_pam = self.pam(image, illum)
        feats, stats = self.encode(ops.concat_channels([image, i_pam, illum]))
        i_res = self.decode(feats, stats, illum)
        return i_pam, i_res, ops.add(i_res, image)


class Discriminator(Module):
    """Patch discriminator: 4x4 convs, strides 2,2,2,1,1, widths 64..512,1."""

    MIN_SIZE = 32

    def __init__(self, rng: np.random.Generator):
        spec = [(3, 64, 2), (64, 128, 2), (128, 256, 2), (256, 512, 1), (512, 1, 1)]
        self.convs = [Conv2d(i, o, kernel_size=4, stride=s, padding=1, rng=rng) for i, o, s in spec]

    def forward(self, image: Tensor) -> Tensor:
        if image.data.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"discriminator expects N x 3 x H x W, got {image.shape}")
        if min(image.shape[2:]) < self.MIN_SIZE:
            raise ShapeError(f"discriminator needs H, W >= {self.MIN_SIZE}, got {image.shape[2:]}")
        h = image
        for conv in self.convs[:-1]:
            h = ops.leaky_relu(conv(h), 0.2)
        return self.convs[-1](h)


class FeatureExtractor(Module):
    """Frozen VGG-style stack: five 3x3 conv+ReLU, pooling after the first four.

    Output is 512 channels at 1/16 resolution. Weights come from a fixed seed
    or from a checkpoint file holding ``fx.convK.weight`` / ``fx.convK.bias``.
    """

    WIDTHS = (3, 64, 128, 256, 512, 512)

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        w = self.WIDTHS
        self.convs = [Conv2d(w[i], w[i + 1], rng=rng, trainable=False) for i in range(5)]
        for conv in self.convs:
            # zero bias: a black image maps to all-zero features
            conv.bias.data[:] = 0

    def file_names(self) -> dict[str, Tensor]:
        names = {}
        for k, conv in enumerate(self.convs, start=1):
            names[f"fx.conv{k}.weight"] = conv.weight
            names[f"fx.conv{k}.bias"] = conv.bias
        return names

    @classmethod
    def from_file(cls, path: str | Path) -> "FeatureExtractor":
        from lowlight.checkpoint import CheckpointError, read_checkpoint

        fx = cls(seed=0)
        params, _, _ = read_checkpoint(path)
        targets = fx.file_names()
        missing = [name for name in targets if name not in params]
        if missing:
            raise CheckpointError(f"{path}: feature weights missing {missing}")
        for name, t in targets.items():
            if params[name].shape != t.shape:
                raise CheckpointError(f"{path}: {name} has shape {params[name].shape}, expected {t.shape}")
        for name, t in targets.items():
            t.data = params[name].astype(np.float32)
        return fx

    def forward(self, image: Tensor) -> Tensor:
        if image.shape[2] % 16 or image.shape[3] % 16:
            raise ShapeError(f"feature extractor needs H, W divisible by 16, got {image.shape[2:]}")
        h = image
        for k, conv in enumerate(self.convs):
            h = ops.relu(conv(h))
            if k < 4:
                h = ops.maxpool2(h)
        return h


def pad_to_multiple(image: np.ndarray, multiple: int = 16) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad the bottom/right of an NCHW array up to the next multiple."""
    h, w = image.shape[2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return image, (h, w)
    return np.pad(image, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect"), (h, w)


def enhance_image(gen: Generator, image: Tensor) -> Tensor:
    """Inference on an arbitrary-size image: pad to a multiple of 16, run, crop."""
    padded, (h, w) = pad_to_multiple(image.data)
    with no_grad():
        _, _, out = gen(Tensor(padded, dtype=image.dtype))
    return Tensor(out.data[:, :, :h, :w], dtype=image.dtype)
