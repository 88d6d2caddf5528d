"""Conditional epsilon-prediction UNet sized for 32x32 images on CPU.

Two resolutions (full and half), residual conv blocks with GroupNorm + SiLU,
conditioning injected as a per-block learned bias from the concatenated
[metadata+timestep, caption] vector. An optional control input adds externally
computed (already gated) feature maps at one injection point per resolution;
the gates live with the control branch so the base model stays self-contained.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F


class ResBlock(nn.Module):
    """conv-GN-(+cond bias)-SiLU-conv-GN-SiLU with a skip connection."""

    def __init__(self, in_ch: int, out_ch: int, cond_dim: int, groups: int = 8) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, out_ch)
        self.cond = nn.Linear(cond_dim, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.norm1(self.conv1(x))
        h = h + self.cond(cond)[..., None, None]
        h = F.silu(h)
        h = F.silu(self.norm2(self.conv2(h)))
        return h + self.skip(x)


class ConditionalUNet(nn.Module):
    """Predicts the noise in z_t given the conditioning vector and caption.

    forward(x, cond, control=None): cond is the concatenation of the width-D
    metadata+timestep vector and the width-E caption embedding. control, when
    given, is a pair of pre-gated feature maps (full-res with ``base``
    channels, half-res with ``mid`` channels) added at the injection points.
    """

    def __init__(
        self,
        in_channels: int = 3,
        base: int = 32,
        mid: int = 64,
        cond_dim: int = 192,
        groups: int = 8,
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.base = base
        self.mid = mid
        self.cond_dim = cond_dim
        self.stem = nn.Conv2d(in_channels, base, 3, padding=1)
        self.enc1 = ResBlock(base, base, cond_dim, groups)
        self.down = nn.Conv2d(base, mid, 3, stride=2, padding=1)
        self.enc2 = ResBlock(mid, mid, cond_dim, groups)
        self.mid1 = ResBlock(mid, mid, cond_dim, groups)
        self.mid2 = ResBlock(mid, mid, cond_dim, groups)
        self.up = nn.Conv2d(mid, base, 3, padding=1)
        self.dec1 = ResBlock(base * 2, base, cond_dim, groups)
        self.out_norm = nn.GroupNorm(groups, base)
        self.out_conv = nn.Conv2d(base, in_channels, 3, padding=1)

    def forward(
        self,
        x: torch.Tensor,
        cond: torch.Tensor,
        control: tuple[torch.Tensor, torch.Tensor] | None = None,
    ) -> torch.Tensor:
        if cond.shape[-1] != self.cond_dim:
            raise ValueError(f"cond width {cond.shape[-1]}, expected {self.cond_dim}")
        h1 = self.enc1(self.stem(x), cond)
        if control is not None:
            h1 = h1 + control[0]
        h = F.silu(self.down(h1))
        h = self.enc2(h, cond)
        h = self.mid1(h, cond)
        h = self.mid2(h, cond)
        if control is not None:
            h = h + control[1]
        h = self.up(F.interpolate(h, scale_factor=2, mode="nearest"))
        h = self.dec1(torch.cat([h, h1], dim=1), cond)
        return self.out_conv(F.silu(self.out_norm(h)))
