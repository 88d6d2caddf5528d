"""The assembled conditional generation model.

Wires together: normalization specs, per-attribute embedders, fusion strategy,
caption encoder, timestep embedder, the UNet denoiser and the schedule. The
model is self-describing: ModelConfig carries every dimension, range and vocab
entry needed to rebuild it, so checkpoints round-trip without side channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
from torch import nn

from .attributes import ATTRIBUTE_ORDER, AttributeSpec, ClampCounter, MetadataRecord, make_specs
from .captions import UNKNOWN_TOKEN, CaptionEncoder
from .denoiser import ConditionalUNet
from .diffusion import DiffusionSchedule, build_schedule, ddim_sample
from .embeddings import MetadataEncoder, SinusoidConfig, TimestepEncoder
from .fusion import (
    ConditioningPacket,
    EmbeddingBundle,
    FusionProjector,
    fuse_additive,
    fuse_concat,
    make_conditioning,
)


@dataclass
class ModelConfig:
    strategy: str = "concat"
    image_size: int = 32
    channels: int = 3
    sin_dim: int = 64
    omega: float = 10000.0
    mlp_hidden: int = 128
    embed_dim: int = 128
    caption_dim: int = 64
    fusion_hidden: int = 256
    unet_base: int = 32
    unet_mid: int = 64
    schedule_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    vocab: list[str] = field(default_factory=lambda: [UNKNOWN_TOKEN])
    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["vocab"] = list(d.get("vocab", [UNKNOWN_TOKEN]))
        d["ranges"] = {k: (float(v[0]), float(v[1])) for k, v in d.get("ranges", {}).items()}
        return cls(**d)


class GenerationModel(nn.Module):
    """Conditional denoising model over [-1, 1] images."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        self.sin_cfg = SinusoidConfig(dim=config.sin_dim, omega=config.omega)
        self.metadata_encoder = MetadataEncoder(
            self.sin_cfg, hidden=config.mlp_hidden, out_dim=config.embed_dim
        )
        self.timestep_encoder = TimestepEncoder(
            self.sin_cfg, hidden=config.mlp_hidden, out_dim=config.embed_dim
        )
        self.caption_encoder = CaptionEncoder(config.vocab, embed_dim=config.caption_dim)
        self.projector = (
            FusionProjector(embed_dim=config.embed_dim, hidden=config.fusion_hidden)
            if config.strategy == "concat"
            else None
        )
        self.denoiser = ConditionalUNet(
            in_channels=config.channels,
            base=config.unet_base,
            mid=config.unet_mid,
            cond_dim=config.embed_dim + config.caption_dim,
        )
        self.schedule: DiffusionSchedule = build_schedule(
            config.schedule_steps, config.beta_start, config.beta_end
        )
        self._specs = make_specs(config.ranges) if config.ranges else None

    # -- metadata plumbing -------------------------------------------------

    @property
    def specs(self) -> list[AttributeSpec]:
        if self._specs is None:
            raise ValueError("model config carries no normalization ranges yet")
        return self._specs

    def normalize_records(
        self, records: list[MetadataRecord], counter: ClampCounter | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        vals, masks = [], []
        for rec in records:
            v, m = rec.normalized(self.specs, counter)
            vals.append(v)
            masks.append(m)
        p = next(self.parameters())
        return (
            torch.tensor(vals, dtype=p.dtype, device=p.device),
            torch.tensor(masks, dtype=torch.bool, device=p.device),
        )

    def bundle(self, values: torch.Tensor, mask: torch.Tensor) -> EmbeddingBundle:
        return EmbeddingBundle(slots=self.metadata_encoder(values, mask), mask=mask)

    def fuse(self, bundle: EmbeddingBundle) -> torch.Tensor:
        if self.config.strategy == "concat":
            assert self.projector is not None
            return fuse_concat(bundle, self.projector)
        return fuse_additive(bundle)

    def timestep_embedding(self, t: torch.Tensor | float) -> torch.Tensor:
        """Embed integer timesteps after mapping them onto the shared [0,1000) scale."""
        scale = 1000.0 / self.schedule.num_steps
        if not torch.is_tensor(t):
            t = torch.tensor(float(t))
        p = next(self.parameters())
        return self.timestep_encoder(t.to(p.dtype).to(p.device) * scale)

    def conditioning(
        self,
        records: list[MetadataRecord],
        captions: list[str],
        t: torch.Tensor,
        counter: ClampCounter | None = None,
    ) -> ConditioningPacket:
        """Full per-call packet: vector = fused metadata + embedded timestep."""
        values, mask = self.normalize_records(records, counter)
        m = self.fuse(self.bundle(values, mask))
        return make_conditioning(
            m, self.timestep_embedding(t), self.caption_encoder(captions), self.config.strategy
        )

    def metadata_packet(
        self,
        records: list[MetadataRecord],
        captions: list[str],
        counter: ClampCounter | None = None,
    ) -> ConditioningPacket:
        """Timestep-independent packet for samplers (vector = fused metadata)."""
        values, mask = self.normalize_records(records, counter)
        m = self.fuse(self.bundle(values, mask))
        return ConditioningPacket(
            vector=m, caption=self.caption_encoder(captions), strategy=self.config.strategy
        )

    def unconditional_packet(self, batch: int) -> ConditioningPacket:
        """Zeroed bundle + empty caption: the conditioning-free pathway."""
        p = next(self.parameters())
        values = torch.zeros(batch, len(ATTRIBUTE_ORDER), dtype=p.dtype, device=p.device)
        mask = torch.zeros(batch, len(ATTRIBUTE_ORDER), dtype=torch.bool, device=p.device)
        m = self.fuse(self.bundle(values, mask))
        return ConditioningPacket(
            vector=m,
            caption=self.caption_encoder(["" for _ in range(batch)]),
            strategy=self.config.strategy,
        )

    # -- denoising ----------------------------------------------------------

    def denoise(self, z_t: torch.Tensor, packet: ConditioningPacket) -> torch.Tensor:
        """Epsilon prediction for one call; packet.vector already includes the timestep."""
        cond = torch.cat([packet.vector, packet.caption], dim=-1)
        return self.denoiser(z_t, cond)

    def eps_fn(self, packet: ConditioningPacket):
        """Sampler-facing closure that adds the embedded timestep per call."""

        def eps(x: torch.Tensor, tau: int) -> torch.Tensor:
            t = torch.full((x.shape[0],), float(tau), device=x.device)
            vec = packet.vector + self.timestep_embedding(t)
            return self.denoiser(x, torch.cat([vec, packet.caption], dim=-1))

        return eps

    @torch.no_grad()
    def sample(
        self,
        packet: ConditioningPacket,
        *,
        steps: int = 100,
        guidance: float = 1.0,
        generator: torch.Generator | None = None,
        batch: int | None = None,
        x_init: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """DDIM sampling; returns images clamped to [-1, 1].

        x_init supplies the top-of-chain noise explicitly (paired comparisons);
        otherwise it is drawn from ``generator``.
        """
        n = batch if batch is not None else packet.vector.shape[0]
        p = next(self.parameters())
        shape = (n, self.config.channels, self.config.image_size, self.config.image_size)
        if x_init is not None:
            x = x_init.to(dtype=p.dtype, device=p.device)
        else:
            x = torch.randn(shape, generator=generator, dtype=p.dtype, device=p.device)
        uncond = None
        if guidance != 1.0:
            uncond = self.eps_fn(self.unconditional_packet(n))
        out = ddim_sample(
            self.eps_fn(packet),
            self.schedule,
            x,
            sample_steps=steps,
            guidance=guidance,
            uncond_eps_fn=uncond,
        )
        return out.clamp(-1.0, 1.0)
