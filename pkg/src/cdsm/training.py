"""Desk-scale adversarial fine-tuning of the generator on a toy dataset.

Non-saturating logistic loss, R1 penalty on real images, horizontal flips as
the only augmentation and no style mixing.  The discriminator is private to
this module and never written to the weight archive.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError, TrainingDiverged
from .generator import GeneratorWeights, run_synthesis, _mapping, broadcast_w
from .generator import styles_from_wplus

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "g_loss", "d_loss", "r1")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    batch_size: int = 8
    g_lr: float = 2e-3
    d_lr: float = 1e-3
    betas: tuple = (0.5, 0.99)
    r1_gamma: float = 2.0
    style_mixing_prob: float = 0.0
    flip_prob: float = 0.5
    d_channels: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.style_mixing_prob <= 1.0:
            raise ConfigError("style_mixing_prob must be in [0, 1]")


class Discriminator(nn.Module):
    def __init__(self, resolution: int, channels: int = 32):
        super().__init__()
        self.from_rgb = nn.Conv2d(3, channels, 1)
        blocks = []
        res = resolution
        while res > 4:
            blocks.append(nn.Conv2d(channels, channels, 3, stride=2, padding=1))
            res //= 2
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(channels * 16, 1)

    def forward(self, x):
        x = F.leaky_relu(self.from_rgb(x), 0.2)
        for conv in self.blocks:
            x = F.leaky_relu(conv(x), 0.2)
        return self.head(x.flatten(1)).squeeze(1)


@dataclass
class TrainingRun:
    weights: GeneratorWeights
    log: List[dict] = field(default_factory=list)
    mixing_events: int = 0
    steps: int = 0
    # generator loss of the initial and final generator under the final critic
    g_loss_start: Optional[float] = None
    g_loss_end: Optional[float] = None


def _flip(x, gen, p):
    if p <= 0:
        return x
    mask = torch.rand(x.shape[0], generator=gen) < p
    return torch.where(mask[:, None, None, None], x.flip(3), x)


class _Generator:
    """Trainable view over a weight dict; noise buffers stay frozen."""

    def __init__(self, weights: GeneratorWeights, trainable: bool = True):
        self.config = weights.config
        self.table = weights.table
        self.tensors = {k: v.detach().clone() for k, v in weights.items()}
        self.params = [v for k, v in self.tensors.items() if not k.startswith("noise_")]
        for p in self.params:
            p.requires_grad_(trainable)
        self.noise = {e.name: self.tensors[f"noise_{e.name}"] for e in self.table if not e.is_trgb}

    def __call__(self, z, mix_z=None, mix_layer=None):
        w = _mapping(self.tensors, self.config, z)
        wplus = broadcast_w(w, self.config)
        if mix_z is not None:
            w2 = _mapping(self.tensors, self.config, mix_z)
            wplus[:, mix_layer:] = w2.unsqueeze(1)
        styles = styles_from_wplus(self, wplus).values
        return run_synthesis(self.tensors, self.config, self.table, styles, self.noise)

    @classmethod
    def frozen(cls, weights):
        return cls(weights, trainable=False)

    def snapshot(self) -> GeneratorWeights:
        return GeneratorWeights(self.config, {k: v.detach().clone() for k, v in self.tensors.items()})


def finetune(
    source: GeneratorWeights,
    images: torch.Tensor,
    cfg: TrainConfig = TrainConfig(),
) -> TrainingRun:
    """Fine-tune a copy of ``source`` on ``images`` (N, 3, H, W) in [-1, 1]."""
    res = source.config.output_resolution
    if images.dim() != 4 or tuple(images.shape[1:]) != (3, res, res):
        raise ShapeError(f"dataset must be (N, 3, {res}, {res}), got {tuple(images.shape)}")
    if cfg.steps == 0:
        return TrainingRun(source.clone(), [], 0, 0)
    if images.shape[0] == 0:
        raise ShapeError("cannot fine-tune on an empty dataset")

    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        D = Discriminator(res, cfg.d_channels)
    G = _Generator(source)
    g_opt = torch.optim.Adam(G.params, lr=cfg.g_lr, betas=cfg.betas)
    d_opt = torch.optim.Adam(D.parameters(), lr=cfg.d_lr, betas=cfg.betas)
    real_all = images.detach().float()
    dim = source.config.latent_dim
    run = TrainingRun(source, [], 0, 0)
    last_good = source.clone()

    def sample_fake():
        z = torch.randn(cfg.batch_size, dim, generator=gen)
        if cfg.style_mixing_prob > 0 and float(torch.rand(1, generator=gen)) < cfg.style_mixing_prob:
            run.mixing_events += 1
            cut = int(torch.randint(1, source.config.num_ws, (1,), generator=gen))
            return G(z, torch.randn(cfg.batch_size, dim, generator=gen), cut)
        return G(z)

    for step in range(cfg.steps):
        idx = torch.randint(0, real_all.shape[0], (cfg.batch_size,), generator=gen)
        real = _flip(real_all[idx], gen, cfg.flip_prob).requires_grad_(True)

        # discriminator: logistic loss + R1 on reals
        with torch.no_grad():
            fake = sample_fake()
        fake = _flip(fake, gen, cfg.flip_prob)
        real_logits = D(real)
        d_loss = F.softplus(D(fake)).mean() + F.softplus(-real_logits).mean()
        (grad,) = torch.autograd.grad(real_logits.sum(), real, create_graph=True)
        r1 = grad.square().sum(dim=[1, 2, 3]).mean()
        d_opt.zero_grad(set_to_none=True)
        (d_loss + 0.5 * cfg.r1_gamma * r1).backward()
        d_opt.step()

        # generator: non-saturating loss
        for p in D.parameters():
            p.requires_grad_(False)
        g_loss = F.softplus(-D(_flip(sample_fake(), gen, cfg.flip_prob))).mean()
        g_opt.zero_grad(set_to_none=True)
        g_loss.backward()
        g_opt.step()
        for p in D.parameters():
            p.requires_grad_(True)

        row = {"step": step, "g_loss": g_loss.item(), "d_loss": d_loss.item(), "r1": r1.item()}
        if not all(math.isfinite(row[k]) for k in LOG_FIELDS[1:]):
            raise TrainingDiverged(f"non-finite loss at step {step}: {row}", last_good=last_good, step=step)
        run.log.append(row)
        last_good = G.snapshot()
        if step % 50 == 0:
            log.info("step %d g_loss %.4f d_loss %.4f r1 %.4f", step, row["g_loss"], row["d_loss"], row["r1"])

    run.weights = last_good
    run.steps = cfg.steps
    run.g_loss_start, run.g_loss_end = _critic_eval(D, source, last_good, cfg)
    return run


def _critic_eval(D, start: GeneratorWeights, end: GeneratorWeights, cfg: TrainConfig, n: int = 64):
    """Non-saturating generator loss of both generators under one critic."""
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    z = torch.randn(n, start.config.latent_dim, generator=gen)
    out = []
    with torch.no_grad():
        for weights in (start, end):
            img = _Generator.frozen(weights)(z)
            out.append(F.softplus(-D(img)).mean().item())
    return tuple(out)


def write_log_csv(rows: List[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in LOG_FIELDS})
    return path
