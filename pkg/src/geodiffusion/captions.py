"""Caption templating and a learned bag-of-tokens text embedding.

Captions follow the fixed template "a satellite image [of a <object>]
[in <country>]"; either clause may be dropped, independently, with a small
probability at dataset-build and training time. The text encoder is
deliberately tiny: a learned embedding table averaged over tokens, which is
all the closed template vocabulary needs.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

import torch
from torch import nn

CLAUSE_DROP_PROB = 0.1
UNKNOWN_TOKEN = "<unk>"

_CAPTION_RE = re.compile(
    r"^a satellite image(?: of a (?P<object>.+?))?(?: in (?P<country>.+?))?$"
)


@dataclass(frozen=True)
class Caption:
    """Structured caption content; None means the clause is absent."""

    object_class: str | None = None
    country: str | None = None


def render_caption(
    caption: Caption,
    rng: random.Random | None = None,
    clause_drop_prob: float = CLAUSE_DROP_PROB,
) -> str:
    """Render the template, independently dropping each present clause.

    With rng=None rendering is deterministic (no dropout). Clause order in the
    draw is fixed (object first, then country) for reproducibility.
    """
    obj = caption.object_class
    country = caption.country
    if rng is not None:
        if obj is not None and rng.random() < clause_drop_prob:
            obj = None
        if country is not None and rng.random() < clause_drop_prob:
            country = None
    text = "a satellite image"
    if obj is not None:
        text += f" of a {obj}"
    if country is not None:
        text += f" in {country}"
    return text


def parse_caption(text: str) -> Caption:
    """Invert render_caption for dropout-free renders."""
    m = _CAPTION_RE.match(text.strip())
    if m is None:
        raise ValueError(f"not a template caption: {text!r}")
    return Caption(object_class=m.group("object"), country=m.group("country"))


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def build_vocabulary(texts: list[str]) -> list[str]:
    """Sorted unique tokens with the unknown token pinned at index 0."""
    seen = set()
    for t in texts:
        seen.update(tokenize(t))
    seen.discard(UNKNOWN_TOKEN)
    return [UNKNOWN_TOKEN] + sorted(seen)


class CaptionEncoder(nn.Module):
    """Mean of learned token embeddings; the empty caption embeds to zeros."""

    def __init__(self, tokens: list[str], embed_dim: int = 64) -> None:
        super().__init__()
        if not tokens or tokens[0] != UNKNOWN_TOKEN:
            raise ValueError(f"tokens must start with {UNKNOWN_TOKEN!r}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.token_to_index = {t: i for i, t in enumerate(self.tokens)}
        self.embed_dim = embed_dim
        self.table = nn.Embedding(len(self.tokens), embed_dim)

    def indices(self, text: str) -> list[int]:
        return [self.token_to_index.get(tok, 0) for tok in tokenize(text)]

    def embed_caption(self, text: str) -> torch.Tensor:
        """(E,) mean over token embeddings; '' maps to the zero vector."""
        idx = self.indices(text)
        if not idx:
            return torch.zeros(
                self.embed_dim,
                dtype=self.table.weight.dtype,
                device=self.table.weight.device,
            )
        rows = self.table(torch.tensor(idx, device=self.table.weight.device))
        return rows.mean(dim=0)

    def forward(self, texts: list[str]) -> torch.Tensor:
        """(B, E) batch of caption embeddings."""
        return torch.stack([self.embed_caption(t) for t in texts])
