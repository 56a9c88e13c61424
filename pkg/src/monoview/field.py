"""Coordinate MLP mapping (position, view direction) to density and color."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ValidationError


def positional_encode(x: torch.Tensor, n_freqs: int, include_input: bool = False) -> torch.Tensor:
    """Frequency encoding ``[sin(2^k pi x), cos(2^k pi x)]`` for ``k < n_freqs``.

    For every frequency the sines of all components come first, then the
    cosines. The output has ``2 * n_freqs * D`` features (plus ``D`` when
    ``include_input``).
    """
    if n_freqs < 0:
        raise ValueError("n_freqs must be >= 0")
    x = torch.as_tensor(x)
    if x.dim() == 0:
        x = x.reshape(1)
    parts = [x] if include_input else []
    for k in range(n_freqs):
        arg = (2.0**k) * math.pi * x
        parts.append(torch.sin(arg))
        parts.append(torch.cos(arg))
    if not parts:
        return x.new_zeros(x.shape[:-1] + (0,))
    return torch.cat(parts, dim=-1)


@dataclass
class FieldConfig:
    depth: int = 8
    width: int = 256
    skips: tuple = (4,)
    pos_freqs: int = 10
    dir_freqs: int = 4
    include_input: bool = True
    # softplus keeps density gradients alive where relu would clip them to zero
    density_activation: str = "softplus"

    def to_dict(self):
        d = asdict(self)
        d["skips"] = list(self.skips)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "skips" in d:
            d["skips"] = tuple(d["skips"])
        return cls(**d)


class RadianceField(nn.Module):
    """NeRF-style MLP. Density is read off the trunk before the view direction enters."""

    def __init__(self, config: FieldConfig | None = None):
        super().__init__()
        self.config = config = config or FieldConfig()
        pos_dim = 3 * (2 * config.pos_freqs + int(config.include_input))
        dir_dim = 3 * (2 * config.dir_freqs + int(config.include_input))
        self.pos_dim, self.dir_dim = pos_dim, dir_dim

        layers = []
        in_dim = pos_dim
        for i in range(config.depth):
            if i in config.skips:
                in_dim += pos_dim
            layers.append(nn.Linear(in_dim, config.width))
            in_dim = config.width
        self.trunk = nn.ModuleList(layers)
        self.density_head = nn.Linear(config.width, 1)
        self.feature = nn.Linear(config.width, config.width)
        self.color_hidden = nn.Linear(config.width + dir_dim, config.width // 2)
        self.color_head = nn.Linear(config.width // 2, 3)

    def density_features(self, positions: torch.Tensor):
        enc = positional_encode(positions, self.config.pos_freqs, self.config.include_input)
        h = enc
        for i, layer in enumerate(self.trunk):
            if i in self.config.skips:
                h = torch.cat([h, enc], dim=-1)
            h = F.relu(layer(h))
        raw = self.density_head(h)[..., 0]
        if self.config.density_activation == "softplus":
            sigma = F.softplus(raw)
        elif self.config.density_activation == "relu":
            sigma = F.relu(raw)
        else:
            raise ValueError(f"unknown density activation {self.config.density_activation!r}")
        return sigma, h

    def forward(self, positions: torch.Tensor, directions: torch.Tensor):
        sigma, h = self.density_features(positions)
        d_enc = positional_encode(directions, self.config.dir_freqs, self.config.include_input)
        h = torch.cat([self.feature(h), d_enc], dim=-1)
        h = F.relu(self.color_hidden(h))
        rgb = torch.sigmoid(self.color_head(h))
        return sigma, rgb


def query_field(field: RadianceField, positions: torch.Tensor, directions: torch.Tensor):
    """Evaluate ``field`` at N points; returns ``(sigma (N,), rgb (N, 3))``."""
    if not (torch.isfinite(positions).all() and torch.isfinite(directions).all()):
        raise ValidationError("field inputs must be finite")
    return field(positions, directions)
