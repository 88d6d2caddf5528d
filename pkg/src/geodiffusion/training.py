"""Noise-prediction training with conditioning dropout.

Each step: sample a batch, a timestep and Gaussian noise, diffuse the clean
images forward, embed the (dropout-masked) metadata and a freshly rendered
caption (clause dropout per presentation), and regress the injected noise
under MSE with AdamW. All randomness flows from generators seeded by the
config, so a rerun reproduces the parameter trajectory bit for bit.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, asdict
from pathlib import Path

import torch

from .alignment import DatasetManifest, read_manifest
from .attributes import MetadataRecord
from .captions import CLAUSE_DROP_PROB, Caption, render_caption
from .diffusion import forward_diffuse
from .fusion import FULL_DROP_PROB, KEEP_PROB, apply_dropout, make_conditioning
from .model import GenerationModel, ModelConfig
from .world import load_png


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    log_every: int = 100
    eval_fraction: float = 0.05
    eval_max_items: int = 256
    full_drop_prob: float = FULL_DROP_PROB
    slot_keep_prob: float = KEEP_PROB
    clause_drop_prob: float = CLAUSE_DROP_PROB

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainItem:
    image: torch.Tensor  # (3, S, S) float32 in [-1, 1]
    record: MetadataRecord
    object_class: str | None
    country: str | None


@dataclass
class ImageDataset:
    items: list[TrainItem]
    ranges: dict[str, tuple[float, float]]

    def __len__(self) -> int:
        return len(self.items)

    @classmethod
    def from_manifest(cls, manifest_path: str | Path) -> "ImageDataset":
        manifest = read_manifest(manifest_path)
        root = Path(manifest_path).parent
        return cls.from_objects(manifest, root)

    @classmethod
    def from_objects(cls, manifest: DatasetManifest, image_root: Path) -> "ImageDataset":
        items = []
        for e in manifest.entries:
            img = torch.from_numpy(load_png(image_root / e.image))
            values = {k: v for k, v in e.meta.items() if e.present.get(k, False)}
            record = MetadataRecord(values=values, present=dict(e.present))
            items.append(
                TrainItem(
                    image=img,
                    record=record,
                    object_class=e.object_class,
                    country=e.country,
                )
            )
        if not items:
            raise ValueError("manifest has no entries")
        return cls(items=items, ranges=manifest.ranges)


def build_model(config: ModelConfig, seed: int) -> GenerationModel:
    """Construct with a pinned global seed so initialization is reproducible."""
    torch.manual_seed(seed)
    return GenerationModel(config)


@dataclass
class TrainHistory:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    eval_steps: list[int] = field(default_factory=list)
    eval_losses: list[float] = field(default_factory=list)

    def to_rows(self) -> list[tuple[int, float]]:
        return list(zip(self.steps, self.losses))


class Trainer:
    def __init__(
        self, model: GenerationModel, dataset: ImageDataset, cfg: TrainConfig
    ) -> None:
        if len(dataset) < 2:
            raise ValueError("dataset too small to split")
        self.model = model
        self.cfg = cfg
        self.optimizer = torch.optim.AdamW(
            model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
        )
        self.gen = torch.Generator().manual_seed(cfg.seed)
        self.caption_rng = random.Random(cfg.seed + 0x9E3779B9)

        n_eval = min(
            int(len(dataset) * cfg.eval_fraction), cfg.eval_max_items
        )
        split_gen = torch.Generator().manual_seed(cfg.seed + 1)
        order = torch.randperm(len(dataset), generator=split_gen).tolist()
        self.eval_indices = sorted(order[:n_eval])
        self.train_indices = sorted(order[n_eval:])
        self.dataset = dataset

        # Precompute normalized metadata once; dropout re-masks per step.
        records = [dataset.items[i].record for i in range(len(dataset))]
        self.values, self.mask = model.normalize_records(records)
        self.images = torch.stack([it.image for it in dataset.items]).to(
            next(model.parameters()).dtype
        )

        # Fixed evaluation draws: one (t, eps) pair per held-out item, full
        # conditioning, no dropout, so eval loss is a deterministic function
        # of the parameters.
        eval_gen = torch.Generator().manual_seed(cfg.seed + 2)
        n = len(self.eval_indices)
        if n:
            self.eval_t = torch.randint(
                0, model.schedule.num_steps, (n,), generator=eval_gen
            )
            self.eval_eps = torch.randn(
                (n, *self.images.shape[1:]), generator=eval_gen
            )

    def _captions(self, indices: list[int], drop: bool) -> list[str]:
        out = []
        for i in indices:
            it = self.dataset.items[i]
            cap = Caption(it.object_class, it.country)
            rng = self.caption_rng if drop else None
            out.append(
                render_caption(cap, rng, clause_drop_prob=self.cfg.clause_drop_prob)
            )
        return out

    def train_step(self, indices: list[int]) -> float:
        model = self.model
        images = self.images[indices]
        b = images.shape[0]
        t = torch.randint(0, model.schedule.num_steps, (b,), generator=self.gen)
        eps = torch.randn(images.shape, generator=self.gen, dtype=images.dtype)
        z_t = forward_diffuse(images, t, eps, model.schedule)

        bundle = model.bundle(self.values[indices], self.mask[indices])
        bundle = apply_dropout(
            bundle,
            self.gen,
            full_drop_prob=self.cfg.full_drop_prob,
            keep_prob=self.cfg.slot_keep_prob,
        )
        packet = make_conditioning(
            model.fuse(bundle),
            model.timestep_embedding(t),
            model.caption_encoder(self._captions(indices, drop=True)),
            model.config.strategy,
        )
        eps_hat = model.denoise(z_t, packet)
        loss = torch.nn.functional.mse_loss(eps_hat, eps)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        return float(loss.detach())

    @torch.no_grad()
    def eval_loss(self) -> float:
        """Deterministic held-out loss with fixed (t, eps) and full conditioning."""
        if not self.eval_indices:
            raise ValueError("no held-out items")
        model = self.model
        images = self.images[self.eval_indices]
        z_t = forward_diffuse(images, self.eval_t, self.eval_eps.to(images.dtype), model.schedule)
        bundle = model.bundle(self.values[self.eval_indices], self.mask[self.eval_indices])
        packet = make_conditioning(
            model.fuse(bundle),
            model.timestep_embedding(self.eval_t),
            model.caption_encoder(self._captions(self.eval_indices, drop=False)),
            model.config.strategy,
        )
        eps_hat = model.denoise(z_t, packet)
        return float(torch.nn.functional.mse_loss(eps_hat, self.eval_eps.to(images.dtype)))

    def run(self, progress=None) -> TrainHistory:
        history = TrainHistory()
        n_train = len(self.train_indices)
        history.eval_steps.append(0)
        history.eval_losses.append(self.eval_loss())
        for step in range(1, self.cfg.steps + 1):
            picks = torch.randint(
                0, n_train, (min(self.cfg.batch_size, n_train),), generator=self.gen
            )
            indices = [self.train_indices[int(i)] for i in picks]
            loss = self.train_step(indices)
            if step % self.cfg.log_every == 0 or step == self.cfg.steps:
                history.steps.append(step)
                history.losses.append(loss)
                if progress is not None:
                    progress(step, loss)
        history.eval_steps.append(self.cfg.steps)
        history.eval_losses.append(self.eval_loss())
        return history
