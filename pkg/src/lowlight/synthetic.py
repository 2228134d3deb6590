"""Synthetic unpaired set for desk-scale training runs.

Clean images are smooth colour gradients with mean luminance near 0.6; low
images are independently drawn gradients scaled by 0.2 with Gaussian noise.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from lowlight.imageio import save_image


def smooth_gradient(rng: np.random.Generator, size: int, mean: float = 0.6, spread: float = 0.3) -> np.ndarray:
    """3 x size x size image: per-channel planar ramp plus one soft sinusoid."""
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    out = np.empty((3, size, size))
    for c in range(3):
        angle = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(angle) * xx + np.sin(angle) * yy
        freq = rng.uniform(0.5, 1.5)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(np.pi * freq * (xx + yy) + phase)
        offset = rng.uniform(-0.05, 0.05)
        out[c] = mean + offset + spread * (0.7 * ramp + 0.3 * wave)
    return np.clip(out, 0.0, 1.0)


def make_unpaired_set(
    root: str | Path,
    count: int = 32,
    size: int = 64,
    seed: int = 0,
    low_scale: float = 0.2,
    noise_sigma: float = 0.02,
) -> tuple[Path, Path]:
    """Write ``root/low`` and ``root/clean`` PNG folders; returns both paths."""
    root = Path(root)
    low_dir, clean_dir = root / "low", root / "clean"
    low_dir.mkdir(parents=True, exist_ok=True)
    clean_dir.mkdir(parents=True, exist_ok=True)
    clean_rng, low_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    for i in range(count):
        save_image(smooth_gradient(clean_rng, size), clean_dir / f"clean_{i:03d}.png")
        low = low_scale * smooth_gradient(low_rng, size) + low_rng.normal(0.0, noise_sigma, (3, size, size))
        save_image(np.clip(low, 0.0, 1.0), low_dir / f"low_{i:03d}.png")
    return low_dir, clean_dir
