"""Combining per-attribute embeddings into a single conditioning vector.

Two strategies: the additive baseline sums the M slot embeddings; the concat
strategy flattens them to one M*D vector and projects it back to D with a
learned two-layer network, so the model can weigh attributes against each
other instead of averaging them away.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .attributes import NUM_ATTRIBUTES

STRATEGIES = ("additive", "concat")

# Conditioning dropout rates. A full drop zeroes the entire bundle; otherwise
# each slot independently keeps with KEEP_PROB. Net per-slot keep = 0.81.
FULL_DROP_PROB = 0.1
KEEP_PROB = 0.9


@dataclass
class EmbeddingBundle:
    """Per-attribute embeddings (..., M, D) plus a validity mask (..., M).

    Masked slots are zero by construction; the mask travels with the tensor so
    dropout and fusion can distinguish "absent" from "embedded zero". The
    production pipeline always carries M = 13 slots in canonical attribute
    order, but the fusion ops themselves work for any M >= 1.
    """

    slots: torch.Tensor
    mask: torch.Tensor

    def __post_init__(self) -> None:
        if self.slots.dim() < 2 or self.slots.shape[-2] < 1:
            raise ValueError(
                f"slots must be (..., M, D) with M >= 1, got {tuple(self.slots.shape)}"
            )
        if self.mask.shape != self.slots.shape[:-1]:
            raise ValueError(
                f"mask shape {tuple(self.mask.shape)} does not match slots "
                f"{tuple(self.slots.shape[:-1])}"
            )
        self.mask = self.mask.to(torch.bool)
        self.slots = self.slots * self.mask.unsqueeze(-1).to(self.slots.dtype)

    @property
    def width(self) -> int:
        return self.slots.shape[-1]

    def zeroed(self) -> "EmbeddingBundle":
        """All-absent bundle of the same shape (the unconditional input)."""
        return EmbeddingBundle(
            slots=torch.zeros_like(self.slots),
            mask=torch.zeros_like(self.mask),
        )


def apply_dropout(
    bundle: EmbeddingBundle,
    generator: torch.Generator,
    full_drop_prob: float = FULL_DROP_PROB,
    keep_prob: float = KEEP_PROB,
) -> EmbeddingBundle:
    """Training-time conditioning dropout.

    First a Bernoulli(full_drop_prob) decides whether the whole bundle is
    zeroed (the unconditional pathway); if it survives, each slot keeps
    independently with keep_prob. Draws happen in a fixed order (full-drop
    draws for the batch, then slot draws), so a seeded generator reproduces
    the exact masks.
    """
    batch_shape = bundle.mask.shape[:-1]
    device = bundle.slots.device
    full = (
        torch.rand(batch_shape, generator=generator, device=device) < full_drop_prob
    )
    slot_keep = (
        torch.rand(bundle.mask.shape, generator=generator, device=device) < keep_prob
    )
    keep = slot_keep & ~full.unsqueeze(-1)
    return EmbeddingBundle(slots=bundle.slots, mask=bundle.mask & keep)


def fuse_additive(bundle: EmbeddingBundle) -> torch.Tensor:
    """Sum of present slots: (..., M, D) -> (..., D)."""
    return bundle.slots.sum(dim=-2)


class FusionProjector(nn.Module):
    """Two-layer perceptron projecting the flattened M*D concatenation to width D."""

    def __init__(
        self,
        embed_dim: int = 128,
        hidden: int = 256,
        num_slots: int = NUM_ATTRIBUTES,
        activation: str = "silu",
    ) -> None:
        super().__init__()
        if activation not in ("silu", "identity"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.embed_dim = embed_dim
        self.activation = activation
        self.fc1 = nn.Linear(num_slots * embed_dim, hidden)
        self.fc2 = nn.Linear(hidden, embed_dim)

    def forward(self, flat: torch.Tensor) -> torch.Tensor:
        if flat.shape[-1] != self.fc1.in_features:
            raise ValueError(
                f"expected concatenated width {self.fc1.in_features}, got {flat.shape[-1]}"
            )
        h = self.fc1(flat)
        if self.activation == "silu":
            h = torch.nn.functional.silu(h)
        return self.fc2(h)


def fuse_concat(bundle: EmbeddingBundle, projector: FusionProjector) -> torch.Tensor:
    """Flatten slots to (..., M*D) and project to (..., D)."""
    flat = bundle.slots.reshape(*bundle.slots.shape[:-2], -1)
    return projector(flat)


@dataclass
class ConditioningPacket:
    """Everything the denoiser needs besides the noisy image.

    ``vector`` is the dense conditioning input of width D. For one denoiser
    call it is fused-metadata + embedded-timestep (see make_conditioning);
    samplers instead carry a packet holding just the fused metadata and add
    the embedded timestep themselves at every step.
    """

    vector: torch.Tensor
    caption: torch.Tensor
    strategy: str

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not torch.isfinite(self.vector).all():
            raise ValueError("non-finite conditioning vector")
        if not torch.isfinite(self.caption).all():
            raise ValueError("non-finite caption conditioning")


def make_conditioning(
    metadata: torch.Tensor,
    timestep: torch.Tensor,
    caption: torch.Tensor,
    strategy: str,
) -> ConditioningPacket:
    """Combine fused metadata with a timestep embedding: vector = m + t."""
    if metadata.shape[-1] != timestep.shape[-1]:
        raise ValueError(
            f"metadata width {metadata.shape[-1]} != timestep width {timestep.shape[-1]}"
        )
    return ConditioningPacket(
        vector=metadata + timestep, caption=caption, strategy=strategy
    )
