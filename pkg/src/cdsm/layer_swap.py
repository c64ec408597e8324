"""Layer swapping: transplant high-resolution layers between two generators."""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict

import torch

from .errors import ConfigError
from .generator import BASE_RESOLUTION, GeneratorWeights, tensor_layer

SOURCE = "source"
TARGET = "target"
NEITHER = "neither"


def check_swap_resolution(config, swap_resolution: int):
    r = swap_resolution
    if (
        not isinstance(r, int)
        or r & (r - 1)
        or not BASE_RESOLUTION < r <= config.output_resolution
    ):
        raise ConfigError(
            f"swap_resolution must be a power of two in ({BASE_RESOLUTION}, {config.output_resolution}], got {r!r}"
        )


def tensor_resolution(weights: GeneratorWeights, name: str):
    """Resolution of the layer owning ``name``; None for the mapping network."""
    if name == "const_input":
        return BASE_RESOLUTION
    layer = tensor_layer(name)
    return None if layer is None else weights.table.entry(layer).resolution


def expected_parent(weights: GeneratorWeights, name: str, swap_resolution: int, inclusive: bool = True) -> str:
    res = tensor_resolution(weights, name)
    if res is None:
        return SOURCE
    from_target = res >= swap_resolution if inclusive else res > swap_resolution
    return TARGET if from_target else SOURCE


def swap_layers(
    source: GeneratorWeights,
    target: GeneratorWeights,
    swap_resolution: int,
    inclusive: bool = True,
) -> GeneratorWeights:
    """Build G_swap: layers at resolution >= ``swap_resolution`` from ``target``.

    The mapping network and constant input always come from ``source``.
    With ``inclusive=False`` the layers at exactly ``swap_resolution`` stay
    with the source.
    """
    if source.config != target.config:
        raise ConfigError("source and target generators have different configs")
    check_swap_resolution(source.config, swap_resolution)
    tensors = OrderedDict()
    for name in source:
        parent = target if expected_parent(source, name, swap_resolution, inclusive) == TARGET else source
        tensors[name] = parent[name].detach().clone()
    return GeneratorWeights(source.config, tensors)


def provenance_report(
    swapped: GeneratorWeights, source: GeneratorWeights, target: GeneratorWeights
) -> Dict[str, str]:
    """Classify every tensor by exact equality; ties go to ``source``."""
    if not (swapped.config == source.config == target.config):
        raise ConfigError("provenance_report needs three generators with the same config")
    report = OrderedDict()
    for name, t in swapped.items():
        if torch.equal(t, source[name]):
            report[name] = SOURCE
        elif torch.equal(t, target[name]):
            report[name] = TARGET
        else:
            report[name] = NEITHER
    return report


def audit_swap(swapped, source, target, swap_resolution: int, inclusive: bool = True):
    """Per-tensor audit rows ``(name, expected, matches_source, matches_target)``."""
    rows = []
    for name, t in swapped.items():
        rows.append(
            (
                name,
                expected_parent(swapped, name, swap_resolution, inclusive),
                torch.equal(t, source[name]),
                torch.equal(t, target[name]),
            )
        )
    return rows
