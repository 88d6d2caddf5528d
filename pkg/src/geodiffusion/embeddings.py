"""Sinusoidal value projection and per-attribute embedding networks.

A scalar already normalized onto [0, 1000] is projected into a d-dimensional
sinusoid vector (sin in even slots, cos in odd slots, geometric frequency
ladder), then passed through a small two-layer perceptron that is private to
the attribute. The timestep of the diffusion process shares the projection but
has its own perceptron.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .attributes import NUM_ATTRIBUTES


@dataclass(frozen=True)
class SinusoidConfig:
    dim: int = 64
    omega: float = 10000.0

    def __post_init__(self) -> None:
        if self.dim <= 0 or self.dim % 2 != 0:
            raise ValueError(f"dim must be a positive even integer, got {self.dim}")
        if self.omega <= 1.0:
            raise ValueError(f"omega must exceed 1, got {self.omega}")

    def frequencies(self, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        i = torch.arange(self.dim // 2, dtype=dtype)
        return self.omega ** (-2.0 * i / self.dim)


def sinusoidal_project(k: torch.Tensor | float, cfg: SinusoidConfig) -> torch.Tensor:
    """Project scalars onto interleaved sin/cos features.

    out[..., 2i] = sin(k * omega^(-2i/d)), out[..., 2i+1] = cos(k * omega^(-2i/d)).
    Accepts any leading batch shape; a bare float yields shape (d,).
    """
    if not torch.is_tensor(k):
        k = torch.tensor(float(k), dtype=torch.float64)
    if not torch.isfinite(k).all():
        raise ValueError("non-finite input to sinusoidal projection")
    freqs = cfg.frequencies(dtype=k.dtype if k.dtype.is_floating_point else torch.float64)
    if not k.dtype.is_floating_point:
        k = k.to(torch.float64)
    args = k.unsqueeze(-1) * freqs
    out = torch.empty(*args.shape[:-1], cfg.dim, dtype=args.dtype)
    out[..., 0::2] = torch.sin(args)
    out[..., 1::2] = torch.cos(args)
    return out


class ValueEmbedder(nn.Module):
    """Two-layer perceptron over a sinusoid projection: d -> H -> D."""

    def __init__(
        self,
        cfg: SinusoidConfig,
        hidden: int = 128,
        out_dim: int = 128,
        activation: str = "silu",
    ) -> None:
        super().__init__()
        if hidden <= 0 or out_dim <= 0:
            raise ValueError("hidden and out_dim must be positive")
        if activation not in ("silu", "identity"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.cfg = cfg
        self.activation = activation
        self.fc1 = nn.Linear(cfg.dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, k: torch.Tensor | float) -> torch.Tensor:
        proj = sinusoidal_project(k, self.cfg).to(self.fc1.weight.dtype)
        h = self.fc1(proj)
        if self.activation == "silu":
            h = torch.nn.functional.silu(h)
        return self.fc2(h)

    @classmethod
    def identity_like(cls, cfg: SinusoidConfig) -> "ValueEmbedder":
        """Degenerate configuration that passes the projection through unchanged."""
        m = cls(cfg, hidden=cfg.dim, out_dim=cfg.dim, activation="identity")
        with torch.no_grad():
            m.fc1.weight.copy_(torch.eye(cfg.dim))
            m.fc1.bias.zero_()
            m.fc2.weight.copy_(torch.eye(cfg.dim))
            m.fc2.bias.zero_()
        return m


def check_finite(module: nn.Module, prefix: str = "") -> None:
    """Raise naming the offending parameter if anything is NaN/Inf."""
    for name, p in module.named_parameters():
        if not torch.isfinite(p).all():
            path = f"{prefix}.{name}" if prefix else name
            raise ValueError(f"non-finite parameter at {path}")


class MetadataEncoder(nn.Module):
    """One private ValueEmbedder per attribute, applied slot-wise.

    forward() takes normalized values (..., M) and a presence mask (..., M)
    and returns per-slot embeddings (..., M, D) with absent slots zeroed.
    """

    def __init__(self, cfg: SinusoidConfig, hidden: int = 128, out_dim: int = 128) -> None:
        super().__init__()
        self.cfg = cfg
        self.out_dim = out_dim
        self.embedders = nn.ModuleList(
            ValueEmbedder(cfg, hidden=hidden, out_dim=out_dim)
            for _ in range(NUM_ATTRIBUTES)
        )

    def embed_attribute(self, k: torch.Tensor | float, index: int) -> torch.Tensor:
        if not 0 <= index < NUM_ATTRIBUTES:
            raise IndexError(f"attribute index {index} out of range")
        return self.embedders[index](k)

    def forward(self, values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if values.shape != mask.shape or values.shape[-1] != NUM_ATTRIBUTES:
            raise ValueError(
                f"values/mask must both end in {NUM_ATTRIBUTES}, got "
                f"{tuple(values.shape)} vs {tuple(mask.shape)}"
            )
        slots = torch.stack(
            [emb(values[..., j]) for j, emb in enumerate(self.embedders)], dim=-2
        )
        return slots * mask.unsqueeze(-1).to(slots.dtype)


class TimestepEncoder(nn.Module):
    """Embeds the (normalized-scale) diffusion timestep with its own perceptron."""

    def __init__(self, cfg: SinusoidConfig, hidden: int = 128, out_dim: int = 128) -> None:
        super().__init__()
        self.embedder = ValueEmbedder(cfg, hidden=hidden, out_dim=out_dim)

    def forward(self, t: torch.Tensor | float) -> torch.Tensor:
        return self.embedder(t)
