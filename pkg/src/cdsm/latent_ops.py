"""Latent-space algebra for cross-domain style mixing.

All functions are pure: inputs are never modified and results share no
storage with mutable inputs (entries are copied, never blended).
"""

from __future__ import annotations

from typing import Sequence

import torch

from .errors import ConfigError, ShapeError
from .generator import GeneratorWeights, LayerTable, StyleCode, styles_from_wplus

DEFAULT_MIX_LEVEL = 6


def check_mix_level(table: LayerTable, m: int) -> int:
    if isinstance(m, bool) or int(m) != m or not 0 <= m <= table.num_ws:
        raise ConfigError(f"mix level must be an integer in [0, {table.num_ws}], got {m!r}")
    return int(m)


def t_of_m(table: LayerTable, m: int) -> int:
    """First canonical (1-based) style index fed by W+ row >= m; ``L + 1`` if none."""
    m = check_mix_level(table, m)
    for e in table:
        if e.row >= m:
            return e.index
    return len(table) + 1


def average_wplus(codes: Sequence[torch.Tensor]) -> torch.Tensor:
    codes = list(codes)
    if not codes:
        raise ShapeError("cannot average an empty list of codes")
    shape = codes[0].shape
    for c in codes[1:]:
        if c.shape != shape:
            raise ShapeError(f"code shape mismatch: {tuple(c.shape)} vs {tuple(shape)}")
    return torch.stack([c.detach() for c in codes]).mean(dim=0)


def replace_trgb(sf: StyleCode, sc: StyleCode) -> StyleCode:
    """Swap the tRGB entries of ``sf`` for those of ``sc``."""
    sf.check_compatible(sc)
    values = [(c if e.is_trgb else f).clone() for e, f, c in zip(sf.table, sf.values, sc.values)]
    return StyleCode(values, sf.table)


def style_mix(sf: StyleCode, sc: StyleCode, m: int) -> StyleCode:
    """Entries ``1 .. t(m)-1`` from ``sf``, entries ``t(m) .. L`` from ``sc``."""
    sf.check_compatible(sc)
    t = t_of_m(sf.table, m)
    values = [(f if e.index < t else c).clone() for e, f, c in zip(sf.table, sf.values, sc.values)]
    return StyleCode(values, sf.table)


def cdsm(wf: torch.Tensor, wc: torch.Tensor, m: int, weights: GeneratorWeights) -> StyleCode:
    """Cross-domain style mixing of a face code ``wf`` and a character code ``wc``."""
    check_mix_level(weights.table, m)
    sf = styles_from_wplus(weights, wf)
    sc = styles_from_wplus(weights, wc)
    return style_mix(replace_trgb(sf, sc), sc, m)


def character_entry_count(table: LayerTable, m: int) -> int:
    """Number of style entries taken from the character side by ``style_mix``."""
    return len(table) + 1 - t_of_m(table, m)
