"""Unpaired data handling, the alternating GAN loop, and checkpoint cadence.

Randomness is derived from ``(seed, epoch)`` only, so an epoch replays
identically whether it starts a run or follows a resume.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from lowlight.checkpoint import checkpoint_save, restore_checkpoint
from lowlight.imageio import is_supported, load_image
from lowlight.losses import (
    LossReport,
    LossWeights,
    adv_loss_d,
    adv_loss_g,
    perceptual_loss,
    total_loss,
    weight_schedule,
)
from lowlight.networks import Discriminator, FeatureExtractor, Generator
from lowlight.optim import AdamState, adam_step
from lowlight.tensor import Tensor, backward

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,step,adv_d,adv_g,perc,total"
LOG_NAME = "loss_log.csv"


class DatasetError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    patch_size: int = 256
    batch_size: int = 4
    epochs: int = 80
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    a_max: float = 10.0
    seed: int = 0
    checkpoint_every: int = 5
    fx_weights: Optional[str] = None
    deterministic: bool = True

    def validate(self) -> None:
        positive = ("patch_size", "batch_size", "epochs", "checkpoint_every")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patch_size % 16:
            raise ValueError(f"patch_size must be a multiple of 16, got {self.patch_size}")
        if self.lr_g < 0 or self.lr_d < 0:
            raise ValueError("learning rates must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.a_max <= 1:
            raise ValueError(f"a_max must exceed 1, got {self.a_max}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass
class DatasetIndex:
    low_paths: list[Path]
    clean_paths: list[Path]
    rng_seed: int = 0


def _list_images(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise DatasetError(f"{directory}: not a directory")
    found = []
    for entry in sorted(directory.iterdir(), key=lambda p: p.name):
        if not entry.is_file():
            continue
        if is_supported(entry):
            found.append(entry)
        else:
            log.warning("skipping non-image file %s", entry)
    if not found:
        raise DatasetError(f"{directory}: no PNG images found")
    return found


def scan_unpaired_dataset(low_dir: str | Path, clean_dir: str | Path, seed: int = 0) -> DatasetIndex:
    return DatasetIndex(_list_images(Path(low_dir)), _list_images(Path(clean_dir)), seed)


def sample_patch(img: Tensor, size: int, rng: np.random.Generator) -> Tensor:
    """Uniform random ``size`` x ``size`` crop; smaller images are reflect-padded first."""
    if size <= 0:
        raise ValueError(f"patch size must be positive, got {size}")
    data = img.data
    h, w = data.shape[2:]
    ph, pw = max(0, size - h), max(0, size - w)
    if ph or pw:
        data = np.pad(data, ((0, 0), (0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)), mode="reflect")
        h, w = data.shape[2:]
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return Tensor(data[:, :, top : top + size, left : left + size])


@dataclass
class Models:
    gen: Generator
    disc: Discriminator
    fx: FeatureExtractor
    opt_states: dict[str, AdamState] = field(default_factory=dict)


def build_models(cfg: TrainConfig) -> Models:
    gen_seq, disc_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    gen = Generator(np.random.default_rng(gen_seq), a_max=cfg.a_max)
    disc = Discriminator(np.random.default_rng(disc_seq))
    fx = FeatureExtractor.from_file(cfg.fx_weights) if cfg.fx_weights else FeatureExtractor(seed=cfg.seed)
    states = {"gen": AdamState.for_params(gen.parameters()), "disc": AdamState.for_params(disc.parameters())}
    return Models(gen, disc, fx, states)


def _first_non_finite(named: Sequence[tuple[str, Tensor]]) -> Optional[str]:
    for name, t in named:
        if not np.all(np.isfinite(t.data)):
            return name
    return None


def train_step(
    gen: Generator,
    disc: Discriminator,
    fx: FeatureExtractor,
    batch_low: Tensor,
    batch_clean: Tensor,
    w: LossWeights,
    opt_states: Mapping[str, AdamState],
    cfg: TrainConfig | None = None,
    epoch: int = 0,
) -> LossReport:
    """One discriminator update on a detached fake batch, then one generator update."""
    cfg = cfg or TrainConfig()
    if batch_low.shape[0] != batch_clean.shape[0]:
        raise ValueError(f"batch sizes differ: {batch_low.shape[0]} low vs {batch_clean.shape[0]} clean")

    _, _, fake = gen(batch_low)

    disc.zero_grad()
    real_logits = disc(batch_clean)
    fake_logits_d = disc(fake.detach())
    loss_d = adv_loss_d(real_logits, fake_logits_d)
    bad = _first_non_finite(
        [("generator output", fake), ("real logits", real_logits), ("fake logits", fake_logits_d), ("adv_d", loss_d)]
    )
    if bad:
        raise NonFiniteError(f"non-finite values in {bad} (epoch {epoch})")
    backward(loss_d)
    adam_step(disc.parameters(), opt_states["disc"], cfg.lr_d, cfg.beta1, cfg.beta2, cfg.adam_eps)

    disc.zero_grad()
    gen.zero_grad()
    fake_logits = disc(fake)
    adv_g = adv_loss_g(fake_logits)
    perc = perceptual_loss(fx, batch_low, fake)
    total = total_loss(adv_g, perc, w)
    bad = _first_non_finite([("generator fake logits", fake_logits), ("adv_g", adv_g), ("perc", perc), ("total", total)])
    if bad:
        raise NonFiniteError(f"non-finite values in {bad} (epoch {epoch})")
    backward(total)
    adam_step(gen.parameters(), opt_states["gen"], cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps)
    disc.zero_grad()
    gen.zero_grad()

    return LossReport(
        adv_g=adv_g.item(),
        adv_d=loss_d.item(),
        perc=perc.item(),
        total=total.item(),
        epoch=epoch,
        omega1=w.omega1,
        omega2=w.omega2,
    )


class _ImageCache:
    def __init__(self):
        self._store: dict[Path, Tensor] = {}

    def get(self, path: Path) -> Tensor:
        if path not in self._store:
            self._store[path] = load_image(path)
        return self._store[path]


def epoch_plan(index: DatasetIndex, cfg: TrainConfig, epoch: int):
    """Batch composition for one epoch: low indices, clean indices, crop rng.

    Low and clean orders come from independent streams; clean draws cycle
    through fresh permutations when the clean set is shorter than an epoch.
    """
    low_seq, clean_seq, crop_seq = np.random.SeedSequence([cfg.seed, epoch]).spawn(3)
    steps = len(index.low_paths) // cfg.batch_size
    low_order = np.random.default_rng(low_seq).permutation(len(index.low_paths))[: steps * cfg.batch_size]
    clean_rng = np.random.default_rng(clean_seq)
    needed = steps * cfg.batch_size
    clean_order = np.concatenate(
        [clean_rng.permutation(len(index.clean_paths)) for _ in range(-(-needed // len(index.clean_paths)))]
    )[:needed]
    return (
        low_order.reshape(steps, cfg.batch_size),
        clean_order.reshape(steps, cfg.batch_size),
        np.random.default_rng(crop_seq),
    )


def checkpoint_path(out_dir: Path, epoch: int) -> Path:
    return out_dir / f"checkpoint_epoch{epoch:04d}.llen"


def fit(
    cfg: TrainConfig,
    index: DatasetIndex,
    out_dir: str | Path,
    resume: str | Path | None = None,
) -> Path:
    """Train for ``cfg.epochs`` epochs and return the final checkpoint path."""
    cfg.validate()
    if len(index.low_paths) < cfg.batch_size:
        raise DatasetError(f"{len(index.low_paths)} low-light images cannot fill a batch of {cfg.batch_size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    limits = threadpool_limits(1) if cfg.deterministic else contextlib.nullcontext()
    with limits:
        return _fit(cfg, index, out_dir, resume)


def _fit(cfg: TrainConfig, index: DatasetIndex, out_dir: Path, resume) -> Path:
    models = build_models(cfg)
    start = 0
    if resume is not None:
        models.opt_states, start = restore_checkpoint(resume, models.gen, models.disc)
        log.info("resumed from %s at epoch %d", resume, start)
    cache = _ImageCache()
    log_path = out_dir / LOG_NAME
    final = Path(resume) if resume is not None else checkpoint_path(out_dir, start)
    mode = "a" if resume is not None and log_path.exists() else "w"
    with open(log_path, mode, buffering=1) as log_fh:
        if mode == "w":
            log_fh.write(LOG_HEADER + "\n")
        for epoch in range(start, cfg.epochs):
            w = weight_schedule(epoch)
            log.info("epoch %d: omega1=%g omega2=%g", epoch, w.omega1, w.omega2)
            low_batches, clean_batches, crop_rng = epoch_plan(index, cfg, epoch)
            for step, (li, ci) in enumerate(zip(low_batches, clean_batches)):
                low = _stack([sample_patch(cache.get(index.low_paths[i]), cfg.patch_size, crop_rng) for i in li])
                clean = _stack([sample_patch(cache.get(index.clean_paths[i]), cfg.patch_size, crop_rng) for i in ci])
                report = train_step(
                    models.gen, models.disc, models.fx, low, clean, w, models.opt_states, cfg, epoch
                )
                log_fh.write(
                    f"{epoch},{step},{report.adv_d:.9g},{report.adv_g:.9g},{report.perc:.9g},{report.total:.9g}\n"
                )
            done = epoch + 1
            if done % cfg.checkpoint_every == 0 or done == cfg.epochs:
                final = checkpoint_path(out_dir, done)
                try:
                    checkpoint_save(final, models.gen, models.disc, models.opt_states, done)
                except OSError:
                    log_fh.flush()
                    raise
                log.info("wrote %s", final)
    return final


def _stack(patches: list[Tensor]) -> Tensor:
    return Tensor(np.concatenate([p.data for p in patches], axis=0))
