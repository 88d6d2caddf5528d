"""Sequence conditioning: a control branch over up to 3 sibling frames.

Each conditioning frame (image + its metadata embedding) is encoded into
feature maps at the denoiser's two resolutions; features are averaged over
the distinct real frames of the sequence and injected into the frozen base
denoiser through learned gates initialized to exactly zero, so an untrained
control branch is a bitwise no-op on the base model.

Order invariance is by construction, not by tolerance: padding entries are
dropped and real frames are sorted by (capture date, content hash) before
encoding, so any permutation of the same frames yields identical features.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, asdict

import torch
from torch import nn
from torch.nn import functional as F

from .attributes import MetadataRecord
from .captions import Caption, render_caption
from .diffusion import ddim_sample, forward_diffuse
from .fusion import ConditioningPacket, make_conditioning
from .model import GenerationModel
from .training import ImageDataset

MAX_SEQUENCE_FRAMES = 3


def _frame_sort_key(image: torch.Tensor, record: MetadataRecord) -> tuple:
    date = (
        record.values.get("year", 0.0),
        record.values.get("month", 0.0),
        record.values.get("day", 0.0),
    )
    blob = image.detach().cpu().to(torch.float32).numpy().tobytes()
    return (*date, hashlib.sha256(blob).hexdigest())


@dataclass
class ConditioningSequence:
    """Up to MAX_SEQUENCE_FRAMES sibling frames; padding entries are flagged."""

    images: list[torch.Tensor]
    records: list[MetadataRecord]
    padding: list[bool]

    def __post_init__(self) -> None:
        n = len(self.images)
        if not (1 <= n <= MAX_SEQUENCE_FRAMES):
            raise ValueError(
                f"sequence needs 1..{MAX_SEQUENCE_FRAMES} frames, got {n}"
            )
        if len(self.records) != n or len(self.padding) != n:
            raise ValueError("images, records and padding must align")
        if all(self.padding):
            raise ValueError("sequence has no real frames")

    @classmethod
    def padded(
        cls,
        images: list[torch.Tensor],
        records: list[MetadataRecord],
        rng: random.Random,
    ) -> "ConditioningSequence":
        """Pad to MAX_SEQUENCE_FRAMES by repeating randomly chosen members."""
        if not images:
            raise ValueError("cannot pad an empty sequence")
        imgs = list(images)
        recs = list(records)
        flags = [False] * len(imgs)
        while len(imgs) < MAX_SEQUENCE_FRAMES:
            j = rng.randrange(len(images))
            imgs.append(images[j])
            recs.append(records[j])
            flags.append(True)
        return cls(images=imgs, records=recs, padding=flags)

    def canonical_real_frames(self) -> list[tuple[torch.Tensor, MetadataRecord]]:
        """Real frames in canonical order; this is what aggregation consumes."""
        real = [
            (img, rec)
            for img, rec, pad in zip(self.images, self.records, self.padding)
            if not pad
        ]
        real.sort(key=lambda pair: _frame_sort_key(*pair))
        return real


class FrameEncoder(nn.Module):
    """Image + broadcast metadata vector -> feature maps at both resolutions."""

    def __init__(self, embed_dim: int, base: int, mid: int, channels: int = 3) -> None:
        super().__init__()
        self.inp = nn.Conv2d(channels + embed_dim, base, 1)
        self.conv1 = nn.Conv2d(base, base, 3, padding=1)
        self.down = nn.Conv2d(base, mid, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(mid, mid, 3, padding=1)

    def forward(
        self, image: torch.Tensor, vector: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        h, w = image.shape[-2:]
        spread = vector[:, :, None, None].expand(-1, -1, h, w)
        x = torch.cat([image, spread], dim=1)
        f1 = F.silu(self.conv1(F.silu(self.inp(x))))
        f2 = F.silu(self.conv2(F.silu(self.down(f1))))
        return f1, f2


class TemporalControl(nn.Module):
    """Frame encoder + per-resolution injection heads and zero-init gates.

    The gates are the only zero-initialized pieces: if the heads also started
    at zero, the product would have no gradient and training could never move
    either. Gate zero => injected features are exactly zero.
    """

    def __init__(self, embed_dim: int, base: int, mid: int, channels: int = 3) -> None:
        super().__init__()
        self.encoder = FrameEncoder(embed_dim, base, mid, channels)
        self.head_full = nn.Conv2d(base, base, 1)
        self.head_half = nn.Conv2d(mid, mid, 1)
        self.gates = nn.Parameter(torch.zeros(2))

    def aggregate(
        self, images: torch.Tensor, vectors: torch.Tensor, frame_to_item: torch.Tensor, n_items: int
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Mean of per-frame features per sequence (frames already canonical)."""
        f1, f2 = self.encoder(images, vectors)
        counts = torch.zeros(n_items, dtype=f1.dtype).index_add_(
            0, frame_to_item, torch.ones(len(frame_to_item), dtype=f1.dtype)
        )
        agg1 = torch.zeros(n_items, *f1.shape[1:], dtype=f1.dtype).index_add_(
            0, frame_to_item, f1
        )
        agg2 = torch.zeros(n_items, *f2.shape[1:], dtype=f2.dtype).index_add_(
            0, frame_to_item, f2
        )
        agg1 = agg1 / counts[:, None, None, None]
        agg2 = agg2 / counts[:, None, None, None]
        return self.gates[0] * self.head_full(agg1), self.gates[1] * self.head_half(agg2)


class TemporalModel(nn.Module):
    """Frozen-base generation model plus the trainable control branch."""

    def __init__(self, base: GenerationModel, control: TemporalControl) -> None:
        super().__init__()
        self.base = base
        self.control = control

    def sequence_features(
        self, sequences: list[ConditioningSequence]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Gated control features, one pair of maps per sequence."""
        images, vectors_src, owner = [], [], []
        for i, seq in enumerate(sequences):
            for img, rec in seq.canonical_real_frames():
                images.append(img)
                vectors_src.append(rec)
                owner.append(i)
        p = next(self.base.parameters())
        stack = torch.stack(images).to(p.dtype)
        values, mask = self.base.normalize_records(vectors_src)
        with torch.no_grad():
            vectors = self.base.fuse(self.base.bundle(values, mask))
        return self.control.aggregate(
            stack, vectors, torch.tensor(owner, dtype=torch.long), len(sequences)
        )

    def denoise(
        self,
        z_t: torch.Tensor,
        packet: ConditioningPacket,
        control: tuple[torch.Tensor, torch.Tensor] | None,
    ) -> torch.Tensor:
        cond = torch.cat([packet.vector, packet.caption], dim=-1)
        return self.base.denoiser(z_t, cond, control=control)

    def eps_fn(self, packet: ConditioningPacket, control):
        def eps(x: torch.Tensor, tau: int) -> torch.Tensor:
            t = torch.full((x.shape[0],), float(tau))
            vec = packet.vector + self.base.timestep_embedding(t)
            return self.base.denoiser(
                x, torch.cat([vec, packet.caption], dim=-1), control=control
            )

        return eps

    @torch.no_grad()
    def sample(
        self,
        packet: ConditioningPacket,
        sequence: ConditioningSequence | None = None,
        *,
        steps: int = 100,
        guidance: float = 1.0,
        generator: torch.Generator | None = None,
        x_init: torch.Tensor | None = None,
    ) -> torch.Tensor:
        cfg = self.base.config
        n = packet.vector.shape[0]
        p = next(self.base.parameters())
        if x_init is not None:
            x = x_init.to(dtype=p.dtype)
        else:
            x = torch.randn(
                (n, cfg.channels, cfg.image_size, cfg.image_size),
                generator=generator,
                dtype=p.dtype,
            )
        control = self.sequence_features([sequence]) if sequence is not None else None
        uncond = None
        if guidance != 1.0:
            uncond = self.eps_fn(self.base.unconditional_packet(n), control)
        out = ddim_sample(
            self.eps_fn(packet, control),
            self.base.schedule,
            x,
            sample_steps=steps,
            guidance=guidance,
            uncond_eps_fn=uncond,
        )
        return out.clamp(-1.0, 1.0)


@dataclass
class TemporalTrainConfig:
    steps: int = 4000
    batch_size: int = 16
    lr: float = 4e-4
    weight_decay: float = 0.01
    seed: int = 0
    log_every: int = 100
    clause_drop_prob: float = 0.1
    holdout_ends: bool = True  # reserve each location's first and last frame

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SequenceItem:
    target_index: int
    candidate_indices: list[int]  # same-location frames usable as conditioning


@dataclass
class TemporalDataset:
    """Per-location frame groups over an ImageDataset.

    Locations are keyed by exact (latitude, longitude); frames sort by capture
    date. Locations with a single frame are excluded: there is nothing to
    condition on. With holdout_ends, each location's first and last frames are
    reserved for evaluation (past / future prediction) and never trained on.
    """

    dataset: ImageDataset
    train_items: list[SequenceItem]
    eval_past: list[SequenceItem] = field(default_factory=list)
    eval_future: list[SequenceItem] = field(default_factory=list)

    @classmethod
    def build(cls, dataset: ImageDataset, holdout_ends: bool = True) -> "TemporalDataset":
        groups: dict[tuple[float, float], list[int]] = {}
        for i, item in enumerate(dataset.items):
            v = item.record.values
            groups.setdefault((v["latitude"], v["longitude"]), []).append(i)

        def date_key(i: int) -> tuple:
            v = dataset.items[i].record.values
            return (v.get("year", 0.0), v.get("month", 0.0), v.get("day", 0.0), i)

        train_items: list[SequenceItem] = []
        eval_past: list[SequenceItem] = []
        eval_future: list[SequenceItem] = []
        for key in sorted(groups):
            frames = sorted(groups[key], key=date_key)
            if len(frames) < 2:
                continue  # single-image locations carry no sequence signal
            if holdout_ends and len(frames) >= 4:
                first, last = frames[0], frames[-1]
                middle = frames[1:-1]
                eval_past.append(
                    SequenceItem(first, middle[: MAX_SEQUENCE_FRAMES])
                )
                eval_future.append(
                    SequenceItem(last, middle[-MAX_SEQUENCE_FRAMES:])
                )
            else:
                middle = frames
            for t in middle:
                others = [f for f in middle if f != t]
                if others:
                    train_items.append(SequenceItem(t, others))
        if not train_items:
            raise ValueError("no multi-frame locations; cannot train a control branch")
        return cls(
            dataset=dataset,
            train_items=train_items,
            eval_past=eval_past,
            eval_future=eval_future,
        )

    def sequence_for(
        self, item: SequenceItem, rng: random.Random, max_frames: int = MAX_SEQUENCE_FRAMES
    ) -> ConditioningSequence:
        k = min(len(item.candidate_indices), max_frames)
        picks = rng.sample(item.candidate_indices, k)
        images = [self.dataset.items[i].image for i in picks]
        records = [self.dataset.items[i].record for i in picks]
        return ConditioningSequence.padded(images, records, rng)


class TemporalTrainer:
    """Trains the control branch (and gates) against the frozen base."""

    def __init__(
        self,
        temporal: TemporalModel,
        data: TemporalDataset,
        cfg: TemporalTrainConfig,
    ) -> None:
        self.temporal = temporal
        self.data = data
        self.cfg = cfg
        for p in temporal.base.parameters():
            p.requires_grad_(False)
        self.optimizer = torch.optim.AdamW(
            temporal.control.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
        )
        self.gen = torch.Generator().manual_seed(cfg.seed)
        self.rng = random.Random(cfg.seed + 0x1F123BB5)

    def train_step(self, picks: list[int]) -> float:
        temporal = self.temporal
        base = temporal.base
        items = [self.data.train_items[i] for i in picks]
        sequences = [self.data.sequence_for(it, self.rng) for it in items]
        targets = [self.data.dataset.items[it.target_index] for it in items]

        images = torch.stack([t.image for t in targets])
        b = images.shape[0]
        t = torch.randint(0, base.schedule.num_steps, (b,), generator=self.gen)
        eps = torch.randn(images.shape, generator=self.gen, dtype=images.dtype)
        z_t = forward_diffuse(images, t, eps, base.schedule)

        records = [t_.record for t_ in targets]
        captions = [
            render_caption(
                Caption(t_.object_class, t_.country),
                self.rng,
                clause_drop_prob=self.cfg.clause_drop_prob,
            )
            for t_ in targets
        ]
        values, mask = base.normalize_records(records)
        with torch.no_grad():
            m = base.fuse(base.bundle(values, mask))
            cap = base.caption_encoder(captions)
            t_emb = base.timestep_embedding(t)
        packet = make_conditioning(m, t_emb, cap, base.config.strategy)
        control = temporal.sequence_features(sequences)
        eps_hat = temporal.denoise(z_t, packet, control)
        loss = torch.nn.functional.mse_loss(eps_hat, eps)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        return float(loss.detach())

    def run(self, progress=None) -> list[tuple[int, float]]:
        history = []
        n = len(self.data.train_items)
        for step in range(1, self.cfg.steps + 1):
            picks = torch.randint(
                0, n, (min(self.cfg.batch_size, n),), generator=self.gen
            ).tolist()
            loss = self.train_step(picks)
            if step % self.cfg.log_every == 0 or step == self.cfg.steps:
                history.append((step, loss))
                if progress is not None:
                    progress(step, loss)
        return history
