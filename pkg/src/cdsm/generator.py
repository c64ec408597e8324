"""Miniature style-based generator.

The generator is functional: a :class:`GeneratorWeights` object is a config
plus an ordered dict of named float32 tensors, and every forward pass is a
plain function of ``(weights, latent, noise)``.  Keeping the weights as a
flat name -> tensor mapping makes layer transplanting, archiving and
provenance audits one-liners.

Styled layers are enumerated by :func:`build_layer_table`.  The W+ row
association follows the usual StyleGAN2 convention: the tRGB of block ``b``
reads the same W+ row as the first conv of block ``b + 1``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

BASE_RESOLUTION = 4
NOISE_MODES = ("fixed", "random", "none")
LRELU_GAIN = math.sqrt(2.0)


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 64
    mapping_depth: int = 4
    output_resolution: int = 32
    channel_base: int = 512
    channel_max: int = 64
    noise_mode: str = "fixed"
    demod_epsilon: float = 1e-8
    noise_init: float = 0.0
    trgb_init: float = 0.25

    def __post_init__(self):
        self.validate()

    def validate(self):
        res = self.output_resolution
        if not isinstance(res, int) or res < 2 * BASE_RESOLUTION or res & (res - 1):
            raise ConfigError(
                f"output_resolution must be a power of two >= {2 * BASE_RESOLUTION}, got {res!r}"
            )
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")
        if self.mapping_depth < 1:
            raise ConfigError(f"mapping_depth must be positive, got {self.mapping_depth}")
        if self.noise_mode not in NOISE_MODES:
            raise ConfigError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")
        if not self.demod_epsilon > 0:
            raise ConfigError("demod_epsilon must be positive")
        if self.channel_max < 1 or self.channel_base < 1:
            raise ConfigError("channel_base and channel_max must be positive")

    @property
    def log2_resolution(self) -> int:
        return int(math.log2(self.output_resolution))

    @property
    def num_ws(self) -> int:
        return 2 * self.log2_resolution - 2

    @property
    def resolutions(self) -> List[int]:
        return [2 ** i for i in range(2, self.log2_resolution + 1)]

    def channels(self, resolution: int) -> int:
        return max(1, min(self.channel_max, self.channel_base // resolution))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LayerEntry:
    index: int  # canonical, 1-based
    name: str
    kind: str  # "conv" or "trgb"
    resolution: int
    width: int  # style width == input channels
    row: int  # W+ row feeding this layer's affine

    @property
    def is_trgb(self) -> bool:
        return self.kind == "trgb"


@dataclass(frozen=True)
class LayerTable:
    entries: tuple
    num_ws: int

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    @property
    def trgb_mask(self) -> List[bool]:
        return [e.is_trgb for e in self.entries]

    def entry(self, name: str) -> LayerEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


def build_layer_table(config: GeneratorConfig) -> LayerTable:
    config.validate()
    entries = []
    row = 0

    def add(name, kind, res, width, row):
        entries.append(LayerEntry(len(entries) + 1, name, kind, res, width, row))

    c4 = config.channels(BASE_RESOLUTION)
    add(f"conv_{BASE_RESOLUTION}", "conv", BASE_RESOLUTION, c4, row)
    row += 1
    add(f"trgb_{BASE_RESOLUTION}", "trgb", BASE_RESOLUTION, c4, row)
    for res in config.resolutions[1:]:
        cin = config.channels(res // 2)
        cout = config.channels(res)
        add(f"conv0_{res}", "conv", res, cin, row)
        row += 1
        add(f"conv1_{res}", "conv", res, cout, row)
        row += 1
        add(f"trgb_{res}", "trgb", res, cout, row)
    table = LayerTable(tuple(entries), config.num_ws)
    assert row == config.num_ws - 1
    return table


class GeneratorWeights:
    """Immutable-by-convention named tensor collection for one generator.

    Canonical tensor names:

    ``mapping_<i>.weight|bias``, ``const_input``, ``affine_<layer>.weight|bias``,
    ``<layer>.weight|bias`` for every styled layer, and for conv layers also
    ``<layer>.noise_strength`` and the fixed buffer ``noise_<layer>``.
    """

    def __init__(self, config: GeneratorConfig, tensors: Dict[str, torch.Tensor]):
        self.config = config
        self.table = build_layer_table(config)
        self.tensors = OrderedDict(tensors)
        self._w_avg = None
        expected = expected_shapes(config)
        if list(expected) != list(self.tensors):
            missing = set(expected) - set(self.tensors)
            extra = set(self.tensors) - set(expected)
            raise ShapeError(f"tensor names do not match config (missing={sorted(missing)}, extra={sorted(extra)})")
        for name, shape in expected.items():
            t = self.tensors[name]
            if tuple(t.shape) != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tuple(t.shape)}")
            if t.dtype != torch.float32:
                raise ShapeError(f"{name}: expected float32, got {t.dtype}")

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def clone(self) -> "GeneratorWeights":
        return GeneratorWeights(self.config, {k: v.detach().clone() for k, v in self.tensors.items()})

    def equal(self, other: "GeneratorWeights") -> bool:
        return (
            self.config == other.config
            and list(self.tensors) == list(other.tensors)
            and all(torch.equal(v, other.tensors[k]) for k, v in self.tensors.items())
        )

    def fingerprint(self) -> str:
        from .archive import fingerprint

        return fingerprint(self)

    @property
    def w_avg(self) -> torch.Tensor:
        if self._w_avg is None:
            self._w_avg = compute_w_avg(self)
        return self._w_avg


def expected_shapes(config: GeneratorConfig) -> "OrderedDict[str, tuple]":
    shapes = OrderedDict()
    dim = config.latent_dim
    for i in range(config.mapping_depth):
        shapes[f"mapping_{i}.weight"] = (dim, dim)
        shapes[f"mapping_{i}.bias"] = (dim,)
    c4 = config.channels(BASE_RESOLUTION)
    shapes["const_input"] = (c4, BASE_RESOLUTION, BASE_RESOLUTION)
    for e in build_layer_table(config):
        shapes[f"affine_{e.name}.weight"] = (e.width, dim)
        shapes[f"affine_{e.name}.bias"] = (e.width,)
        if e.is_trgb:
            shapes[f"{e.name}.weight"] = (3, e.width)
            shapes[f"{e.name}.bias"] = (3,)
        else:
            cout = config.channels(e.resolution)
            shapes[f"{e.name}.weight"] = (cout, e.width, 3, 3)
            shapes[f"{e.name}.bias"] = (cout,)
            shapes[f"{e.name}.noise_strength"] = (1,)
            shapes[f"noise_{e.name}"] = (e.resolution, e.resolution)
    return shapes


def tensor_layer(name: str) -> Optional[str]:
    """Styled layer that owns tensor ``name``; None for mapping and const."""
    if name.startswith("mapping_") or name == "const_input":
        return None
    if name.startswith("affine_"):
        return name[len("affine_"):].split(".")[0]
    if name.startswith("noise_"):
        return name[len("noise_"):]
    return name.split(".")[0]


def init_weights(config: GeneratorConfig, seed: int) -> GeneratorWeights:
    gen = torch.Generator().manual_seed(int(seed))
    tensors = OrderedDict()
    for name, shape in expected_shapes(config).items():
        if name.startswith("affine_") and name.endswith(".bias"):
            t = torch.ones(shape)
        elif name.endswith(".bias"):
            t = torch.zeros(shape)
        elif name.endswith(".noise_strength"):
            t = torch.full(shape, config.noise_init)
        elif name.startswith("trgb_"):
            t = torch.randn(shape, generator=gen) * config.trgb_init
        else:
            t = torch.randn(shape, generator=gen)
        tensors[name] = t.float()
    return GeneratorWeights(config, tensors)


# --------------------------------------------------------------------------
# mapping network and latent spaces


def _mapping(tensors, config, z):
    x = z * torch.rsqrt(z.square().mean(dim=-1, keepdim=True) + 1e-8)
    scale = 1.0 / math.sqrt(config.latent_dim)
    for i in range(config.mapping_depth):
        x = F.linear(x, tensors[f"mapping_{i}.weight"] * scale, tensors[f"mapping_{i}.bias"])
        x = F.leaky_relu(x, 0.2) * LRELU_GAIN
    return x


def map_z_to_w(weights: GeneratorWeights, z: torch.Tensor) -> torch.Tensor:
    """Run the mapping network; accepts ``(dim,)`` or ``(N, dim)``."""
    if z.shape[-1] != weights.config.latent_dim or z.dim() not in (1, 2):
        raise ShapeError(f"z must have trailing dim {weights.config.latent_dim}, got shape {tuple(z.shape)}")
    return _mapping(weights.tensors, weights.config, z.float())


def sample_z(config: GeneratorConfig, n: int, seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    return torch.randn(n, config.latent_dim, generator=gen)


def compute_w_avg(weights: GeneratorWeights, num_samples: int = 10000, seed: int = 123) -> torch.Tensor:
    with torch.no_grad():
        w = map_z_to_w(weights, sample_z(weights.config, num_samples, seed))
    return w.mean(dim=0)


def broadcast_w(w: torch.Tensor, config: GeneratorConfig) -> torch.Tensor:
    """Embed a W latent into W+ by repeating it on every row."""
    if w.shape[-1] != config.latent_dim:
        raise ShapeError(f"w must have trailing dim {config.latent_dim}")
    return w.unsqueeze(-2).expand(*w.shape[:-1], config.num_ws, config.latent_dim).clone()


# --------------------------------------------------------------------------
# StyleSpace


@dataclass
class StyleCode:
    """Per-layer style vectors; entry ``i`` belongs to ``table[i]``.

    Entries are ``(width,)`` for a single code or ``(N, width)`` for a batch.
    """

    values: List[torch.Tensor]
    table: LayerTable = field(repr=False)

    def __post_init__(self):
        if len(self.values) != len(self.table):
            raise ShapeError(f"style code has {len(self.values)} entries, table has {len(self.table)}")
        for v, e in zip(self.values, self.table):
            if v.shape[-1] != e.width:
                raise ShapeError(f"style for {e.name} has width {v.shape[-1]}, expected {e.width}")

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    @property
    def trgb_flags(self) -> List[bool]:
        return self.table.trgb_mask

    def check_compatible(self, other: "StyleCode"):
        if self.table != other.table:
            raise ShapeError("style codes belong to different layer tables")

    def equal(self, other: "StyleCode") -> bool:
        return self.table == other.table and all(torch.equal(a, b) for a, b in zip(self.values, other.values))

    def clone(self) -> "StyleCode":
        return StyleCode([v.clone() for v in self.values], self.table)

    def flat(self) -> torch.Tensor:
        return torch.cat([v.reshape(*v.shape[:-1], -1) for v in self.values], dim=-1)


def styles_from_wplus(weights: GeneratorWeights, wplus: torch.Tensor) -> StyleCode:
    """Apply each layer's affine map to its W+ row (``s = A(w)``)."""
    cfg = weights.config
    if wplus.dim() not in (2, 3) or tuple(wplus.shape[-2:]) != (cfg.num_ws, cfg.latent_dim):
        raise ShapeError(f"W+ code must have shape (..., {cfg.num_ws}, {cfg.latent_dim}), got {tuple(wplus.shape)}")
    t = weights.tensors
    scale = 1.0 / math.sqrt(cfg.latent_dim)
    values = []
    for e in weights.table:
        w = wplus[..., e.row, :]
        values.append(F.linear(w, t[f"affine_{e.name}.weight"] * scale, t[f"affine_{e.name}.bias"]))
    return StyleCode(values, weights.table)


# --------------------------------------------------------------------------
# synthesis


def _modulated_conv(x, weight, style, demodulate, eps):
    cout, cin, kh, kw = weight.shape
    weight = weight * (1.0 / math.sqrt(cin * kh * kw))
    x = x * style[:, :, None, None]
    x = F.conv2d(x, weight, padding=kh // 2)
    if demodulate:
        wsq = weight.square().sum(dim=[2, 3])  # (cout, cin)
        d = torch.rsqrt(style.square() @ wsq.t() + eps)
        x = x * d[:, :, None, None]
    return x


def _upsample(x):
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def _noise_maps(weights, noise_mode, noise_seed, n):
    if noise_mode == "fixed":
        return {e.name: weights.tensors[f"noise_{e.name}"] for e in weights.table if not e.is_trgb}
    if noise_mode == "none":
        return {}
    gen = torch.Generator().manual_seed(int(noise_seed or 0))
    return {
        e.name: torch.randn(n, 1, e.resolution, e.resolution, generator=gen)
        for e in weights.table
        if not e.is_trgb
    }


def run_synthesis(
    tensors,
    config: GeneratorConfig,
    table: LayerTable,
    styles: Sequence[torch.Tensor],
    noise: Dict[str, torch.Tensor],
    features: Optional[dict] = None,
) -> torch.Tensor:
    """Low-level forward on batched styles ``(N, width)``; returns raw NCHW rgb.

    When ``features`` is a dict it receives every conv activation, i.e. the
    feature map each later layer (and each tRGB) reads.
    """
    n = styles[0].shape[0]
    x = tensors["const_input"].unsqueeze(0).expand(n, -1, -1, -1)
    rgb = None
    for e, s in zip(table, styles):
        w = tensors[f"{e.name}.weight"]
        b = tensors[f"{e.name}.bias"]
        if e.is_trgb:
            y = _modulated_conv(x, w[:, :, None, None], s, False, config.demod_epsilon)
            y = y + b[None, :, None, None]
            rgb = y if rgb is None else _upsample(rgb) + y
            continue
        if e.name.startswith("conv0_"):
            x = _upsample(x)
        x = _modulated_conv(x, w, s, True, config.demod_epsilon)
        nz = noise.get(e.name)
        if nz is not None:
            if nz.dim() == 2:
                nz = nz[None, None]
            x = x + tensors[f"{e.name}.noise_strength"] * nz
        x = F.leaky_relu(x + b[None, :, None, None], 0.2) * LRELU_GAIN
        if features is not None:
            features[e.name] = x
    return rgb


def _batched(styles: StyleCode):
    single = styles.values[0].dim() == 1
    vals = [v.unsqueeze(0) if single else v for v in styles.values]
    return vals, single


def synthesize_from_styles(
    weights: GeneratorWeights,
    styles: StyleCode,
    noise_seed: Optional[int] = None,
    *,
    noise_mode: Optional[str] = None,
    clamp: bool = True,
    features: Optional[dict] = None,
) -> torch.Tensor:
    """Decode a style code to an image, ``(3, H, W)`` or ``(N, 3, H, W)``.

    ``noise_seed`` only matters when ``noise_mode == "random"``.
    """
    if styles.table != weights.table:
        raise ShapeError("style code does not match the generator's layer table")
    vals, single = _batched(styles)
    mode = noise_mode or weights.config.noise_mode
    noise = _noise_maps(weights, mode, noise_seed, vals[0].shape[0])
    rgb = run_synthesis(weights.tensors, weights.config, weights.table, vals, noise, features)
    if clamp:
        rgb = rgb.clamp(-1.0, 1.0)
    if single:
        rgb = rgb[0]
        if features is not None:
            for k in features:
                features[k] = features[k][0]
    return rgb


def to_wplus(weights: GeneratorWeights, latent: torch.Tensor, space: str) -> torch.Tensor:
    cfg = weights.config
    if space == "z":
        return broadcast_w(map_z_to_w(weights, latent), cfg)
    if space == "w":
        return broadcast_w(latent, cfg)
    if space == "w+":
        return latent
    raise ConfigError(f"unknown latent space {space!r}")


def synthesize(
    weights: GeneratorWeights,
    latent: torch.Tensor,
    noise_seed: Optional[int] = None,
    *,
    space: str = "w+",
    **kwargs,
) -> torch.Tensor:
    """Synthesize from a Z, W or W+ latent (``space`` in ``{"z", "w", "w+"}``)."""
    wplus = to_wplus(weights, latent, space.lower())
    return synthesize_from_styles(weights, styles_from_wplus(weights, wplus), noise_seed, **kwargs)
