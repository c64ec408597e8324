"""Procedural stand-ins for the face and cartoon datasets.

``faceish`` images use smooth gradients, soft edges and sensor-like noise;
``cartoonish`` images use flat fills and hard black outlines, with a small
fixed set of pseudo-characters distinguished by palette and face shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
from PIL import Image, ImageDraw, ImageFilter

from .errors import ConfigError
from .images import from_uint8, to_uint8

DOMAINS = ("faceish", "cartoonish")
SUPERSAMPLE = 4

# (skin, hair, eye, background, face aspect, eye scale)
CHARACTERS = {
    "aoi": ((255, 224, 196), (40, 60, 160), (30, 120, 220), (250, 240, 200), 0.80, 1.6),
    "beni": ((250, 210, 180), (200, 40, 40), (120, 30, 30), (210, 240, 250), 0.95, 1.2),
    "kiro": ((240, 200, 150), (250, 200, 40), (60, 140, 60), (230, 210, 250), 0.70, 1.9),
    "midori": ((255, 235, 215), (30, 140, 80), (20, 20, 20), (255, 220, 230), 0.88, 1.4),
}


@dataclass(frozen=True)
class ToyDatasetSpec:
    domain: str = "cartoonish"
    count: int = 64
    seed: int = 0
    resolution: int = 32
    num_characters: int = 4
    axis_range: Tuple[float, float] = (0.30, 0.40)  # face half-height, fraction of image
    outline_width: int = 1
    flat_fill: Optional[bool] = None  # None -> domain default

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        if not 3 <= self.num_characters <= len(CHARACTERS):
            raise ConfigError(f"num_characters must be in [3, {len(CHARACTERS)}]")
        if self.resolution < 8:
            raise ConfigError("resolution must be >= 8")

    @property
    def uses_flat_fill(self) -> bool:
        return self.domain == "cartoonish" if self.flat_fill is None else self.flat_fill


@dataclass
class ToySample:
    image: torch.Tensor  # (3, H, W) in [-1, 1]
    label: str
    name: str


def _ellipse(cx, cy, rx, ry):
    return [cx - rx, cy - ry, cx + rx, cy + ry]


def _draw_cartoon(spec, rng, cid):
    skin, hair, eye, bg, aspect, eye_scale = CHARACTERS[cid]
    s = spec.resolution * SUPERSAMPLE
    ow = spec.outline_width * SUPERSAMPLE
    im = Image.new("RGB", (s, s), bg)
    d = ImageDraw.Draw(im)
    ry = rng.uniform(*spec.axis_range) * s
    rx = ry * aspect
    cx = s / 2 + rng.uniform(-0.06, 0.06) * s
    cy = s / 2 + rng.uniform(-0.04, 0.06) * s
    d.ellipse(_ellipse(cx, cy - 0.25 * ry, rx * 1.15, ry * 0.95), fill=hair, outline=(0, 0, 0), width=ow)
    d.ellipse(_ellipse(cx, cy + 0.1 * ry, rx, ry * 0.9), fill=skin, outline=(0, 0, 0), width=ow)
    er = 0.12 * ry * eye_scale
    look = rng.uniform(-0.3, 0.3) * er
    for side in (-1, 1):
        ex, ey = cx + side * 0.42 * rx, cy + 0.05 * ry
        d.ellipse(_ellipse(ex, ey, er * 0.8, er), fill=(255, 255, 255), outline=(0, 0, 0), width=ow)
        d.ellipse(_ellipse(ex + look, ey, er * 0.45, er * 0.6), fill=eye)
    my = cy + 0.55 * ry
    d.line([cx - 0.2 * rx, my, cx + 0.2 * rx, my], fill=(0, 0, 0), width=ow)
    # nearest keeps the palette flat
    return im.resize((spec.resolution, spec.resolution), Image.NEAREST)


def _draw_face(spec, rng):
    s = spec.resolution * SUPERSAMPLE
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float32) / s
    top = rng.uniform(60, 200, size=3)
    bottom = rng.uniform(60, 200, size=3)
    bg = top[None, None] * (1 - yy[..., None]) + bottom[None, None] * yy[..., None]

    ry = rng.uniform(*spec.axis_range)
    rx = ry * rng.uniform(0.72, 0.86)
    cx = 0.5 + rng.uniform(-0.06, 0.06)
    cy = 0.5 + rng.uniform(-0.04, 0.06)
    r2 = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    tone = np.array([228, 182, 150], np.float32) * rng.uniform(0.55, 1.05) + rng.uniform(-12, 12, size=3)
    shade = (1.0 - 0.35 * np.clip(r2, 0, 1))[..., None]
    light = 1.0 + 0.15 * (xx - cx)[..., None]
    skin = tone * shade * light
    mask = (r2 < 1.0).astype(np.float32)[..., None]
    img = bg * (1 - mask) + skin * mask
    for side in (-1, 1):
        e2 = ((xx - cx - side * 0.38 * rx) / (0.11 * rx)) ** 2 + ((yy - cy + 0.05 * ry) / (0.06 * ry)) ** 2
        em = np.exp(-e2)[..., None]
        img = img * (1 - em) + np.array([50, 35, 30], np.float32) * em
    pil = Image.fromarray(np.clip(img, 0, 255).astype(np.uint8), "RGB")
    pil = pil.filter(ImageFilter.GaussianBlur(radius=SUPERSAMPLE * 0.8))
    pil = pil.resize((spec.resolution, spec.resolution), Image.BILINEAR)
    arr = np.asarray(pil).astype(np.float32) + rng.normal(0, 2.5, size=(spec.resolution, spec.resolution, 3))
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def generate_dataset(spec: ToyDatasetSpec) -> List[ToySample]:
    rng = np.random.default_rng(spec.seed)
    ids = list(CHARACTERS)[: spec.num_characters]
    samples = []
    for i in range(spec.count):
        if spec.domain == "cartoonish":
            cid = ids[i % len(ids)]
            arr = np.asarray(_draw_cartoon(spec, rng, cid))
            if not spec.uses_flat_fill:
                arr = np.clip(arr + rng.normal(0, 2.5, arr.shape), 0, 255).astype(np.uint8)
            samples.append(ToySample(from_uint8(arr), cid, f"{cid}_{i:04d}"))
        else:
            arr = _draw_face(spec, rng)
            samples.append(ToySample(from_uint8(arr), "face", f"face_{i:04d}"))
    return samples


def unique_colors(image: torch.Tensor) -> int:
    arr = to_uint8(image).reshape(-1, 3)
    return len(np.unique(arr, axis=0))


def mean_unique_colors(images) -> float:
    images = list(images)
    return float(np.mean([unique_colors(im) for im in images])) if images else 0.0


def stack_images(samples: List[ToySample]) -> torch.Tensor:
    return torch.stack([s.image for s in samples])
