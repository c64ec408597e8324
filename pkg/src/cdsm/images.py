"""Conversions between internal (3, H, W) float images in [-1, 1] and 8-bit PNG files."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import MissingInputError


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """``(3, H, W)`` in [-1, 1] -> ``(H, W, 3)`` uint8."""
    arr = image.detach().cpu().float().clamp(-1, 1).permute(1, 2, 0).numpy()
    return np.rint((arr + 1.0) * 127.5).clip(0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {arr.shape}")
    return torch.from_numpy(arr.astype(np.float32) / 127.5 - 1.0).permute(2, 0, 1).contiguous()


def save_png(image: torch.Tensor, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed encoder settings keep the bytes reproducible
    Image.fromarray(to_uint8(image), "RGB").save(path, format="PNG", optimize=False, compress_level=6)
    return path


def load_png(path) -> torch.Tensor:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"image not found: {path}")
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def image_hash(image: torch.Tensor) -> str:
    t = image.detach().cpu().float().contiguous()
    return hashlib.sha256(str(tuple(t.shape)).encode() + t.numpy().tobytes()).hexdigest()
