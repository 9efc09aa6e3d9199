"""Encoder-decoder generator with skip connections and a patch discriminator."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from demgan.errors import AlignmentError, ConfigError, DomainError


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    out_channels: int = 1
    depth: int = 4
    base_channels: int = 16
    max_mult: int = 8
    dropout: float = 0.5
    # innermost decoder blocks that apply dropout (the noise input)
    dropout_blocks: int = 1
    skip_connections: bool = True
    norm: bool = True

    def channels(self) -> list[int]:
        return [self.base_channels * min(2**i, self.max_mult) for i in range(self.depth)]

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 4
    base_channels: int = 16
    n_layers: int = 3
    max_mult: int = 8
    norm: bool = True

    def patch_grid(self, size: int) -> int:
        """Side length of the logits grid for a ``size`` x ``size`` input."""
        s = size
        for _ in range(self.n_layers):
            s = (s + 2 - 4) // 2 + 1
        return s - 2  # two stride-1, k4, p1 convolutions

    def to_dict(self):
        return asdict(self)


def _norm(ch: int, enabled: bool) -> nn.Module:
    return nn.InstanceNorm2d(ch, affine=True) if enabled else nn.Identity()


class UNetGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        if cfg.depth < 1:
            raise ConfigError(f"generator depth must be >= 1, got {cfg.depth}")
        self.cfg = cfg
        ch = cfg.channels()
        self.down = nn.ModuleList()
        for i in range(cfg.depth):
            c_in = cfg.in_channels if i == 0 else ch[i - 1]
            use_norm = cfg.norm and 0 < i < cfg.depth - 1
            self.down.append(
                nn.Sequential(nn.Conv2d(c_in, ch[i], 4, 2, 1), _norm(ch[i], use_norm), nn.LeakyReLU(0.2))
            )
        self.up = nn.ModuleList()
        for i in range(cfg.depth - 1, 0, -1):
            c_in = ch[i] if (i == cfg.depth - 1 or not cfg.skip_connections) else 2 * ch[i]
            self.up.append(
                nn.Sequential(nn.ConvTranspose2d(c_in, ch[i - 1], 4, 2, 1), _norm(ch[i - 1], cfg.norm), nn.ReLU())
            )
        c_last = ch[0] * (2 if cfg.skip_connections and cfg.depth > 1 else 1)
        self.final = nn.ConvTranspose2d(c_last, cfg.out_channels, 4, 2, 1)

    def forward(self, x: torch.Tensor, stochastic: bool | None = None) -> torch.Tensor:
        if stochastic is None:
            stochastic = self.training
        size = x.shape[-1]
        if x.shape[-2] % 2**self.cfg.depth or size % 2**self.cfg.depth:
            raise AlignmentError(f"input {tuple(x.shape[-2:])} not divisible by 2**{self.cfg.depth}")
        feats = []
        h = x
        for block in self.down:
            h = block(h)
            feats.append(h)
        for n, block in enumerate(self.up):
            level = self.cfg.depth - 1 - n
            if n > 0 and self.cfg.skip_connections:
                h = torch.cat([h, feats[level]], dim=1)
            h = block(h)
            if n < self.cfg.dropout_blocks and self.cfg.dropout > 0:
                h = F.dropout(h, self.cfg.dropout, training=stochastic)
        if self.cfg.skip_connections and self.cfg.depth > 1:
            h = torch.cat([h, feats[0]], dim=1)
        return torch.tanh(self.final(h))


class PatchDiscriminator(nn.Module):
    """Grid of real/fake logits, one per receptive-field patch."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        b = cfg.base_channels
        layers: list[nn.Module] = [nn.Conv2d(cfg.in_channels, b, 4, 2, 1), nn.LeakyReLU(0.2)]
        prev = b
        for n in range(1, cfg.n_layers):
            c = b * min(2**n, cfg.max_mult)
            layers += [nn.Conv2d(prev, c, 4, 2, 1), _norm(c, cfg.norm), nn.LeakyReLU(0.2)]
            prev = c
        c = b * min(2**cfg.n_layers, cfg.max_mult)
        layers += [nn.Conv2d(prev, c, 4, 1, 1), _norm(c, cfg.norm), nn.LeakyReLU(0.2)]
        layers.append(nn.Conv2d(c, 1, 4, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, rgb: torch.Tensor, dem: torch.Tensor) -> torch.Tensor:
        if rgb.shape[-2:] != dem.shape[-2:] or rgb.shape[0] != dem.shape[0]:
            raise AlignmentError(f"rgb {tuple(rgb.shape)} and dem {tuple(dem.shape)} are not aligned")
        return self.net(torch.cat([rgb, dem], dim=1))


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    """N(0, std) conv weights, N(1, std) norm scales, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            nn.init.normal_(m.weight, 1.0, std)
            nn.init.zeros_(m.bias)


def generator_forward(gen: UNetGenerator, rgb: torch.Tensor, stochastic: bool = False) -> torch.Tensor:
    """Predict a signed-unit DEM batch ``(n, 1, h, w)`` from RGB ``(n, 3, h, w)``."""
    if rgb.numel() and (rgb.min() < -1.0 or rgb.max() > 1.0):
        raise DomainError("generator input must be in the signed-unit range [-1, 1]")
    return gen(rgb, stochastic=stochastic)


def discriminator_forward(disc: PatchDiscriminator, rgb: torch.Tensor, dem: torch.Tensor) -> torch.Tensor:
    return disc(rgb, dem)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
