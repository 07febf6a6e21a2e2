"""Residual mesh U-Net over the pooling hierarchy, for all three convolution variants."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch
from torch import nn

from meshwss.bundle import MeshBundle
from meshwss.conv import AttentionConv, GemConv, IsotropicConv, default_relu_samples, regular_relu
from meshwss.exceptions import ConfigurationError
from meshwss.features import FLATTENED, IRREPS, N_INPUT_CHANNELS, IRREP_INPUT_REP
from meshwss.gauge import RepType, concat_permutation
from meshwss.pooling import DEFAULT_RATIOS

ISOTROPIC, ATTENTION, GEM = "isotropic", "attention", "gem"
ARCH_ALIASES = {"sage": ISOTROPIC, "feast": ATTENTION, "gem": GEM,
                ISOTROPIC: ISOTROPIC, ATTENTION: ATTENTION}
TANGENTIAL, TANGENTIAL_NORMAL, EUCLIDEAN3 = "tangential", "tangential+normal", "euclidean3"

DEFAULT_WIDTHS = {ISOTROPIC: (48, 96, 192), ATTENTION: (48, 96, 192), GEM: (16, 32, 50)}


@dataclasses.dataclass(frozen=True)
class UNetConfig:
    """Architecture description.

    ``widths`` are channel counts per scale for the Euclidean variants and
    multiplicities of each irrep order ``0..max_order`` for GEM.
    """

    variant: str = GEM
    widths: tuple | None = None
    blocks_per_scale: int = 1
    max_order: int = 2
    frequency_cap: int | None = None
    relu_samples: int | None = None
    output_mode: str | None = None
    heads: int = 1
    ratios: tuple = DEFAULT_RATIOS
    skip_connections: bool = True
    seed: int = 0

    def __post_init__(self):
        variant = ARCH_ALIASES.get(str(self.variant).lower())
        if variant is None:
            raise ConfigurationError(f"unknown convolution variant {self.variant!r}")
        object.__setattr__(self, "variant", variant)
        widths = tuple(int(w) for w in (self.widths or DEFAULT_WIDTHS[variant]))
        if len(widths) != 3 or min(widths) < 1:
            raise ConfigurationError(f"need three positive widths (one per scale), got {widths}")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if len(self.ratios) != 3:
            raise ConfigurationError("the U-Net uses exactly three pooling steps")
        mode = self.output_mode or (TANGENTIAL if variant == GEM else EUCLIDEAN3)
        if variant == GEM and mode not in (TANGENTIAL, TANGENTIAL_NORMAL):
            raise ConfigurationError(f"GEM output mode must be tangential or tangential+normal, got {mode!r}")
        if variant != GEM and mode != EUCLIDEAN3:
            raise ConfigurationError("isotropic/attention networks predict unconstrained 3-vectors")
        object.__setattr__(self, "output_mode", mode)
        if self.blocks_per_scale < 1:
            raise ConfigurationError("blocks_per_scale must be >= 1")
        if variant == GEM:
            samples = self.relu_samples or default_relu_samples(self.max_order)
            if samples < 2 * self.max_order + 1:
                raise ConfigurationError("relu_samples below 2 * max_order + 1")
            object.__setattr__(self, "relu_samples", samples)

    @property
    def is_gem(self) -> bool:
        return self.variant == GEM

    @property
    def feature_form(self) -> str:
        return IRREPS if self.is_gem else FLATTENED

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        d["ratios"] = list(self.ratios)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> UNetConfig:
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        d["ratios"] = tuple(d["ratios"])
        return cls(**d)


class _Linear(nn.Module):
    def __init__(self, c_in, c_out, generator):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(c_in, c_out, generator=generator) / math.sqrt(c_in))

    def forward(self, f):
        return f @ self.weight


class ResBlock(nn.Module):
    """Two convolutions with a skip: ``act(conv2(act(conv1(x))) + skip(x))``."""

    def __init__(self, config: UNetConfig, c_in, c_out, generator):
        super().__init__()
        self.config = config
        self.c_in, self.c_out = c_in, c_out
        if config.is_gem:
            self.conv1 = GemConv(c_in, c_out, config.frequency_cap, generator=generator)
            self.conv2 = GemConv(c_out, c_out, config.frequency_cap, generator=generator)
            self.skip = None if c_in == c_out else GemConv(c_in, c_out, neighbor=False, generator=generator)
        else:
            make = (lambda a, b: AttentionConv(a, b, config.heads, generator)) if config.variant == ATTENTION \
                else (lambda a, b: IsotropicConv(a, b, generator))
            self.conv1 = make(c_in, c_out)
            self.conv2 = make(c_out, c_out)
            self.skip = None if c_in == c_out else _Linear(c_in, c_out, generator)

    def act(self, f):
        if self.config.is_gem:
            return regular_relu(f, self.c_out, self.config.relu_samples)
        return torch.relu(f)

    def forward(self, f, graph):
        h = self.act(self.conv1(f, graph))
        h = self.conv2(h, graph)
        return self.act(h + (f if self.skip is None else self.skip(f)))


class WSSNet(nn.Module):
    """Encoder-decoder predicting one 3D wall-shear-stress vector per vertex."""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(config.seed)
        gem = config.is_gem
        if gem:
            reps = [RepType.regular(config.max_order, w) for w in config.widths]
            c_in = IRREP_INPUT_REP
        else:
            reps = list(config.widths)
            c_in = N_INPUT_CHANNELS
        self.scale_types = reps

        def stack(a, b):
            blocks = [ResBlock(config, a, b, gen)]
            blocks += [ResBlock(config, b, b, gen) for _ in range(config.blocks_per_scale - 1)]
            return nn.ModuleList(blocks)

        self.encoder = nn.ModuleList()
        prev = c_in
        for rep in reps:
            self.encoder.append(stack(prev, rep))
            prev = rep
        self.bottleneck = stack(reps[-1], reps[-1])
        self.decoder = nn.ModuleList()
        self._perms = []
        up = reps[-1]
        for rep in reversed(reps):
            if config.skip_connections:
                if gem:
                    perm, merged = concat_permutation([up, rep])
                else:
                    perm, merged = None, up + rep
            else:
                perm, merged = None, up
            self._perms.append(None if perm is None else torch.as_tensor(perm))
            self.decoder.append(stack(merged, rep))
            up = rep
        if gem:
            out_rep = RepType([(1, 1)]) if config.output_mode == TANGENTIAL else RepType([(0, 1), (1, 1)])
            self.head = GemConv(reps[0], out_rep, neighbor=False, generator=gen)
        else:
            self.head = _Linear(reps[0], 3, gen)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _run(self, blocks, f, graph):
        for block in blocks:
            f = block(f, graph)
        return f

    def forward(self, bundle: MeshBundle, inputs: torch.Tensor) -> torch.Tensor:
        """Per-vertex 3D prediction for the mesh in ``bundle``."""
        config = self.config
        gem = config.is_gem
        dtype = inputs.dtype
        if len(bundle.hierarchy.levels) != 4:
            raise ConfigurationError("bundle hierarchy must have four levels (three pooling steps)")
        graphs = [bundle.message_graph(lvl, gem, dtype) for lvl in range(4)]
        f = inputs
        skips = []
        for lvl, blocks in enumerate(self.encoder):
            f = self._run(blocks, f, graphs[lvl])
            skips.append(f)
            f = bundle.pool_operator(lvl + 1).pool(f, self.scale_types[lvl] if gem else None)
        f = self._run(self.bottleneck, f, graphs[3])
        for k, blocks in enumerate(self.decoder):
            lvl = 2 - k
            f = bundle.pool_operator(lvl + 1).unpool(f, self.scale_types[lvl + 1 if lvl < 2 else 2] if gem else None)
            if config.skip_connections:
                f = torch.cat([f, skips[lvl]], dim=1)
                if self._perms[k] is not None:
                    f = f[:, self._perms[k]]
            f = self._run(blocks, f, graphs[lvl])
        out = self.head(f)
        if not gem:
            return out
        frames = bundle.frames
        e1 = torch.as_tensor(frames.e1, dtype=dtype)
        e2 = torch.as_tensor(frames.e2, dtype=dtype)
        if config.output_mode == TANGENTIAL:
            return out[:, :1] * e1 + out[:, 1:2] * e2
        n = torch.as_tensor(frames.normal, dtype=dtype)
        return out[:, :1] * n + out[:, 1:2] * e1 + out[:, 2:3] * e2


def flatten_params(model: nn.Module) -> np.ndarray:
    """Single ordered float64 coefficient vector (parameter registration order)."""
    return torch.cat([p.detach().reshape(-1).to(torch.float64) for p in model.parameters()]).numpy()


def unflatten_params(model: nn.Module, flat) -> None:
    flat = np.asarray(flat)
    total = sum(p.numel() for p in model.parameters())
    if flat.shape != (total,):
        raise ValueError(f"expected {total} coefficients, got shape {flat.shape}")
    offset = 0
    with torch.no_grad():
        for p in model.parameters():
            k = p.numel()
            p.copy_(torch.as_tensor(flat[offset:offset + k]).reshape(p.shape).to(p.dtype))
            offset += k
