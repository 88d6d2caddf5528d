import numpy as np
import pytest
import torch

from geodiffusion.model import GenerationModel, ModelConfig


def tiny_ranges() -> dict:
    return {
        "year": (2020.0, 2022.0),
        "day": (1.0, 31.0),
        "gsd": (0.3, 1.5),
        "t2m": (250.0, 310.0),
        "tp": (0.0, 0.02),
        "u10": (-12.0, 12.0),
        "v10": (-12.0, 12.0),
        "ssr": (0.0, 3.0e7),
        "d2m": (245.0, 300.0),
    }


def tiny_config(strategy: str = "concat", **overrides) -> ModelConfig:
    """Small widths so forward passes and finite differences stay cheap."""
    base = dict(
        strategy=strategy,
        image_size=16,
        sin_dim=8,
        mlp_hidden=16,
        embed_dim=16,
        caption_dim=8,
        fusion_hidden=32,
        unet_base=8,
        unet_mid=16,
        schedule_steps=50,
        vocab=["<unk>", "a", "satellite", "image", "of", "in", "lake", "japan"],
        ranges=tiny_ranges(),
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model() -> GenerationModel:
    torch.manual_seed(0)
    return GenerationModel(tiny_config())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
