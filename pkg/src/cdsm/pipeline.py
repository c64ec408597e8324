"""End-to-end stylization: face image + character ID + mix level -> image."""

from __future__ import annotations

from typing import MutableMapping, Optional, Sequence

import torch

from .generator import GeneratorWeights, StyleCode, synthesize_from_styles
from .images import image_hash
from .inversion import CharacterBank, ProjectionConfig, invert_source, query_bank
from .latent_ops import DEFAULT_MIX_LEVEL, cdsm, check_mix_level


def face_code(
    weights: GeneratorWeights,
    face: torch.Tensor,
    cfg: Optional[ProjectionConfig] = None,
    cache: Optional[MutableMapping] = None,
) -> torch.Tensor:
    if cache is None:
        return invert_source(weights, face, cfg)
    key = (weights.fingerprint(), image_hash(face), repr(cfg))
    if key not in cache:
        cache[key] = invert_source(weights, face, cfg)
    return cache[key].clone()


def stylize_styles(
    weights: GeneratorWeights,
    bank: CharacterBank,
    face: torch.Tensor,
    character_id: str,
    m: int = DEFAULT_MIX_LEVEL,
    *,
    projection: Optional[ProjectionConfig] = None,
    cache: Optional[MutableMapping] = None,
) -> StyleCode:
    """The mixed style code that :func:`stylize` decodes."""
    check_mix_level(weights.table, m)
    wc = query_bank(bank, character_id, weights)
    wf = face_code(weights, face, projection, cache)
    return cdsm(wf, wc, m, weights)


def stylize(
    weights: GeneratorWeights,
    bank: CharacterBank,
    face: torch.Tensor,
    character_id: str,
    m: int = DEFAULT_MIX_LEVEL,
    noise_seed: Optional[int] = None,
    *,
    projection: Optional[ProjectionConfig] = None,
    cache: Optional[MutableMapping] = None,
) -> torch.Tensor:
    styles = stylize_styles(weights, bank, face, character_id, m, projection=projection, cache=cache)
    with torch.no_grad():
        return synthesize_from_styles(weights, styles, noise_seed)


def stylize_batch(
    weights: GeneratorWeights,
    bank: CharacterBank,
    faces: Sequence[torch.Tensor],
    character_ids: Sequence[str],
    levels: Sequence[int],
    noise_seed: Optional[int] = None,
    **kwargs,
):
    if not len(faces) == len(character_ids) == len(levels):
        raise ValueError("faces, character_ids and levels must have the same length")
    out = []
    for i, (face, cid, m) in enumerate(zip(faces, character_ids, levels)):
        try:
            out.append(stylize(weights, bank, face, cid, m, noise_seed, **kwargs))
        except Exception as exc:
            exc.args = (f"batch item {i}: {exc}",) + exc.args[1:]
            raise
    return out
