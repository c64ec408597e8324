"""Optimization-based projection into W / W+ and the per-character latent bank."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import (
    ConfigError,
    FingerprintMismatch,
    InsufficientImages,
    MissingInputError,
    ProjectionError,
    ShapeError,
    UnknownCharacter,
)
from .generator import GeneratorWeights, broadcast_w, map_z_to_w, sample_z, synthesize
from .latent_ops import average_wplus

SPACES = ("W", "W+")
BANK_FORMAT = "cdsm-character-bank"
BANK_VERSION = 1


@dataclass(frozen=True)
class ProjectionConfig:
    space: str = "W+"
    steps: int = 500
    learning_rate: float = 0.1
    lr_rampup: float = 0.05
    lr_rampdown: float = 0.25
    betas: tuple = (0.9, 0.99)
    pixel_weight: float = 1.0
    multiscale_weight: float = 1.0
    reg_weight: float = 1e-3
    init: str = "w_avg"
    seed: int = 0

    def __post_init__(self):
        if self.space not in SPACES:
            raise ConfigError(f"space must be one of {SPACES}, got {self.space!r}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if min(self.pixel_weight, self.multiscale_weight, self.reg_weight) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.init not in ("w_avg", "random"):
            raise ConfigError(f"init must be 'w_avg' or 'random', got {self.init!r}")

    def learning_rate_at(self, step: int) -> float:
        # cosine ramp-down over the last `lr_rampdown` of the schedule, short linear ramp-up
        t = step / self.steps
        down = min(1.0, (1.0 - t) / self.lr_rampdown) if self.lr_rampdown > 0 else 1.0
        down = 0.5 - 0.5 * math.cos(down * math.pi)
        up = min(1.0, t / self.lr_rampup) if self.lr_rampup > 0 else 1.0
        return self.learning_rate * down * up


@dataclass
class ProjectionResult:
    code: torch.Tensor  # (latent_dim,) for W, (num_ws, latent_dim) for W+
    loss: float
    space: str
    losses: List[float] = field(default_factory=list, repr=False)
    best_losses: List[float] = field(default_factory=list, repr=False)

    def __iter__(self):
        return iter((self.code, self.loss))

    def wplus(self, config) -> torch.Tensor:
        return broadcast_w(self.code, config) if self.space == "W" else self.code


def _pyramid_mse(img, target, weights):
    pix_w, ms_w = weights
    loss = pix_w * (img - target).square().mean(dim=[1, 2, 3])
    if ms_w:
        for factor in (2, 4):
            a = F.avg_pool2d(img, factor)
            b = F.avg_pool2d(target, factor)
            loss = loss + ms_w * (a - b).square().mean(dim=[1, 2, 3])
    return loss


def _initial_codes(weights, cfg, n, rows):
    if cfg.init == "w_avg":
        w0 = weights.w_avg.expand(n, -1)
    else:
        with torch.no_grad():
            w0 = map_z_to_w(weights, sample_z(weights.config, n, cfg.seed))
    return w0.unsqueeze(1).expand(n, rows, -1).clone()


def project_batch(
    weights: GeneratorWeights,
    images: torch.Tensor,
    cfg: ProjectionConfig = ProjectionConfig(),
    callback: Optional[Callable] = None,
) -> List[ProjectionResult]:
    """Project ``(N, 3, H, W)`` targets independently (Adam is per-element).

    Generator weights and noise are frozen; only the latent is optimized.
    Each returned code is the best-loss iterate of its own trajectory.
    """
    config = weights.config
    res = config.output_resolution
    if images.dim() != 4 or tuple(images.shape[1:]) != (3, res, res):
        raise ShapeError(f"targets must have shape (N, 3, {res}, {res}), got {tuple(images.shape)}")
    target = images.detach().float()
    n = target.shape[0]
    rows = config.num_ws if cfg.space == "W+" else 1
    w_avg = weights.w_avg
    code = _initial_codes(weights, cfg, n, rows).requires_grad_(True)
    opt = torch.optim.Adam([code], lr=cfg.learning_rate, betas=tuple(cfg.betas))

    best_loss = torch.full((n,), float("inf"))
    best_code = code.detach().clone()
    losses = [[] for _ in range(n)]
    best_trace = [[] for _ in range(n)]

    for step in range(cfg.steps + 1):
        wplus = code.expand(n, config.num_ws, -1)
        img = synthesize(weights, wplus, clamp=False)
        loss = _pyramid_mse(img, target, (cfg.pixel_weight, cfg.multiscale_weight))
        loss = loss + cfg.reg_weight * (code - w_avg).square().mean(dim=[1, 2])
        detached = loss.detach()
        if not torch.isfinite(detached).all():
            bad = [i for i in range(n) if not math.isfinite(float(detached[i]))]
            raise ProjectionError(
                f"non-finite projection loss at step {step} for target(s) {bad}; "
                f"try a smaller learning_rate (now {cfg.learning_rate})"
            )
        improved = detached < best_loss
        best_loss = torch.where(improved, detached, best_loss)
        best_code[improved] = code.detach()[improved]
        for i in range(n):
            losses[i].append(float(detached[i]))
            best_trace[i].append(float(best_loss[i]))
        if callback is not None:
            callback(step, code.detach(), detached)
        if step == cfg.steps:
            break
        for group in opt.param_groups:
            group["lr"] = cfg.learning_rate_at(step)
        opt.zero_grad(set_to_none=True)
        loss.sum().backward()
        opt.step()

    results = []
    for i in range(n):
        c = best_code[i, 0] if cfg.space == "W" else best_code[i]
        results.append(ProjectionResult(c.clone(), float(best_loss[i]), cfg.space, losses[i], best_trace[i]))
    return results


def project(
    weights: GeneratorWeights,
    image: torch.Tensor,
    cfg: ProjectionConfig = ProjectionConfig(),
    callback: Optional[Callable] = None,
) -> ProjectionResult:
    """Project one ``(3, H, W)`` image in [-1, 1]."""
    if image.dim() != 3:
        raise ShapeError(f"expected a single (3, H, W) image, got shape {tuple(image.shape)}")
    return project_batch(weights, image.unsqueeze(0), cfg, callback)[0]


def reconstruction_mse(weights: GeneratorWeights, result: ProjectionResult, image: torch.Tensor) -> float:
    with torch.no_grad():
        recon = synthesize(weights, result.wplus(weights.config))
    return float((recon - image).square().mean())


SOURCE_PROFILE = ProjectionConfig(space="W+")


def invert_source(
    weights_swapped: GeneratorWeights,
    face_image: torch.Tensor,
    cfg: Optional[ProjectionConfig] = None,
) -> torch.Tensor:
    """Face image -> W+ code of the swapped generator.

    Stands in for a pretrained feed-forward encoder; any W-space config is
    promoted to W+ so the result is always ``(num_ws, latent_dim)``.
    """
    cfg = cfg or SOURCE_PROFILE
    if cfg.space != "W+":
        cfg = replace(cfg, space="W+")
    return project(weights_swapped, face_image, cfg).code


# --------------------------------------------------------------------------
# character bank


@dataclass
class CharacterBank:
    codes: Dict[str, torch.Tensor]
    k: int
    seed: int
    fingerprint: str
    per_image: Dict[str, List[torch.Tensor]] = field(default_factory=dict, repr=False)
    sample_names: Dict[str, List[str]] = field(default_factory=dict, repr=False)

    @property
    def ids(self) -> List[str]:
        return sorted(self.codes)

    def equal(self, other: "CharacterBank") -> bool:
        return (
            self.k == other.k
            and self.seed == other.seed
            and self.fingerprint == other.fingerprint
            and sorted(self.codes) == sorted(other.codes)
            and all(torch.equal(v, other.codes[c]) for c, v in self.codes.items())
        )


def _group_dataset(dataset):
    groups: Dict[str, list] = OrderedDict()
    for i, item in enumerate(dataset):
        if len(item) == 2:
            cid, img = item
            name = f"{i:08d}"
        else:
            cid, img, name = item
        groups.setdefault(str(cid), []).append((name, img))
    for cid in groups:
        groups[cid].sort(key=lambda p: p[0])
    return groups


def build_character_bank(
    weights_swapped: GeneratorWeights,
    dataset: Sequence[tuple],
    k: int = 8,
    cfg: ProjectionConfig = ProjectionConfig(),
    seed: int = 0,
    progress: Optional[Callable[[str, int], None]] = None,
) -> CharacterBank:
    """Average ``k`` W+ projections per character ID.

    ``dataset`` items are ``(id, image)`` or ``(id, image, name)``; images of
    an ID are sorted by name and ``k`` of them drawn with ``seed``.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    if cfg.space != "W+":
        raise ConfigError("character codes live in W+; use a W+ projection config")
    groups = _group_dataset(dataset)
    if not groups:
        raise InsufficientImages("dataset is empty")
    deficits = {cid: k - len(items) for cid, items in groups.items() if len(items) < k}
    if deficits:
        detail = ", ".join(f"{cid}: has {k - d}, needs {k} (short by {d})" for cid, d in sorted(deficits.items()))
        raise InsufficientImages(f"not enough images for k={k}: {detail}")

    rng = np.random.default_rng(seed)
    codes, per_image, names = OrderedDict(), OrderedDict(), OrderedDict()
    for cid in sorted(groups):
        items = groups[cid]
        if len(items) > k:
            picks = sorted(rng.choice(len(items), size=k, replace=False).tolist())
            items = [items[i] for i in picks]
        projected = []
        for j, (name, img) in enumerate(items):
            projected.append(project(weights_swapped, img, cfg).code)
            if progress is not None:
                progress(cid, j)
        per_image[cid] = projected
        names[cid] = [name for name, _ in items]
        codes[cid] = average_wplus(projected)
    return CharacterBank(codes, k, seed, weights_swapped.fingerprint(), per_image, names)


def query_bank(bank: CharacterBank, character_id: str, weights: Optional[GeneratorWeights] = None) -> torch.Tensor:
    if weights is not None:
        fp = weights.fingerprint()
        if fp != bank.fingerprint:
            raise FingerprintMismatch(
                f"bank was built for generator {bank.fingerprint[:12]}, but the generator in use is "
                f"{fp[:12]}; rebuild the bank against this generator"
            )
    if character_id not in bank.codes:
        raise UnknownCharacter(
            f"unknown character id {character_id!r}; available: {', '.join(bank.ids) or '(none)'}"
        )
    return bank.codes[character_id].clone()


def bank_to_dict(bank: CharacterBank) -> dict:
    return {
        "format": BANK_FORMAT,
        "version": BANK_VERSION,
        "k": bank.k,
        "seed": bank.seed,
        "fingerprint": bank.fingerprint,
        "codes": {cid: bank.codes[cid].tolist() for cid in sorted(bank.codes)},
        "per_image": {cid: [c.tolist() for c in v] for cid, v in sorted(bank.per_image.items())},
        "sample_names": {cid: list(v) for cid, v in sorted(bank.sample_names.items())},
    }


def bank_from_dict(d: dict) -> CharacterBank:
    if d.get("format") != BANK_FORMAT:
        raise ConfigError("not a character bank document")
    if d.get("version") != BANK_VERSION:
        raise ConfigError(f"unsupported bank version {d.get('version')!r}")

    def t(x):
        return torch.tensor(x, dtype=torch.float32)

    return CharacterBank(
        codes=OrderedDict((cid, t(v)) for cid, v in d["codes"].items()),
        k=int(d["k"]),
        seed=int(d["seed"]),
        fingerprint=d["fingerprint"],
        per_image=OrderedDict((cid, [t(c) for c in v]) for cid, v in d.get("per_image", {}).items()),
        sample_names=dict(d.get("sample_names", {})),
    )


def save_bank(bank: CharacterBank, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(bank_to_dict(bank), indent=1, sort_keys=True) + "\n")
    return path


def load_bank(path) -> CharacterBank:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"character bank not found: {path}")
    return bank_from_dict(json.loads(path.read_text()))
