"""8-bit PNG <-> [0, 1] NCHW tensors."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from lowlight.tensor import Tensor

SUPPORTED_SUFFIXES = (".png",)


class ImageIOError(OSError):
    pass


def is_supported(path: str | Path) -> bool:
    return Path(path).suffix.lower() in SUPPORTED_SUFFIXES


def load_image(path: str | Path) -> Tensor:
    """Decode an 8-bit RGB/RGBA PNG to a 1 x 3 x H x W tensor (alpha dropped)."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise ImageIOError(f"{path}: unsupported format {img.format}, expected PNG")
            if img.mode not in ("RGB", "RGBA"):
                raise ImageIOError(f"{path}: unsupported mode {img.mode}, expected 8-bit RGB or RGBA")
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        if isinstance(exc, ImageIOError):
            raise
        raise ImageIOError(f"{path}: cannot read image ({exc})") from exc
    chw = arr.transpose(2, 0, 1)[None].astype(np.float32) / np.float32(255.0)
    return Tensor(chw)


def to_bytes(t: Tensor | np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half up to uint8, returning H x W x 3."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if data.ndim == 4:
        if data.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {data.shape[0]}")
        data = data[0]
    if data.ndim != 3 or data.shape[0] != 3:
        raise ValueError(f"expected 3 x H x W image data, got shape {data.shape}")
    scaled = np.floor(np.clip(data.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5)
    return np.ascontiguousarray(scaled.astype(np.uint8).transpose(1, 2, 0))


def save_image(t: Tensor | np.ndarray, path: str | Path) -> None:
    path = Path(path)
    try:
        Image.fromarray(to_bytes(t)).save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write image ({exc})") from exc
