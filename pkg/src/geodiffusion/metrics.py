"""Image metrics and the two analysis probes.

ssim/psnr compare pairs on the [0, 1] scale; moment_distance compares two
image SETS by the Frechet distance between Gaussians fitted to block-mean
features (a cheap stand-in for embedding-space set distances). The probes:
recoverability_probe quantifies how much attribute information survives each
fusion strategy; fidelity_probe sweeps one metadata attribute through a
trained model and rank-correlates a pixel statistic against the sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .attributes import ATTRIBUTE_ORDER, NUM_ATTRIBUTES
from .embeddings import MetadataEncoder, SinusoidConfig
from .fusion import EmbeddingBundle, fuse_additive

# -- paired image metrics ----------------------------------------------------

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _ssim_kernel() -> np.ndarray:
    xs = np.arange(_SSIM_WINDOW, dtype=np.float64) - (_SSIM_WINDOW - 1) / 2.0
    k = np.exp(-0.5 * (xs / _SSIM_SIGMA) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation over the trailing two axes."""
    n = len(kernel)
    h = img.shape[-2] - n + 1
    out = sum(w * img[..., k : k + h, :] for k, w in enumerate(kernel))
    w_ = img.shape[-1] - n + 1
    return sum(w * out[..., :, k : k + w_] for k, w in enumerate(kernel))


def _as_channels(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W) or (C, H, W), got shape {a.shape}")
    return a


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity; inputs on [0, 1], shapes must match.

    Gaussian 11x11 window (sigma 1.5), valid-mode. All moments go through one
    code path, so identical inputs collapse to exactly 1.0.
    """
    x, y = _as_channels(a), _as_channels(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.shape[-2] < _SSIM_WINDOW or x.shape[-1] < _SSIM_WINDOW:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    k = _ssim_kernel()
    mu_x = _filter_valid(x, k)
    mu_y = _filter_valid(y, k)
    var_x = _filter_valid(x * x, k) - mu_x * mu_x
    var_y = _filter_valid(y * y, k) - mu_y * mu_y
    cov = _filter_valid(x * y, k) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


PSNR_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) on the [0, 1] scale, capped at 99.0 dB."""
    x, y = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


# -- set-level moment distance -----------------------------------------------


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_gaussian(
    mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray
) -> float:
    """||mu_a-mu_b||^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), eigendecomposed."""
    diff = float(np.sum((mu_a - mu_b) ** 2))
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    cross = 2.0 * float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    # nonnegative by construction; eigen rounding can leave a tiny negative
    return max(0.0, diff + float(np.trace(cov_a) + np.trace(cov_b)) - cross)


def block_mean_features(images: np.ndarray, blocks: int = 4) -> np.ndarray:
    """(N, C, H, W) -> (N, C*blocks*blocks) block means, float64."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"expected (N, C, H, W), got shape {arr.shape}")
    n, c, h, w = arr.shape
    if h % blocks or w % blocks:
        raise ValueError(f"{h}x{w} images do not split into {blocks}x{blocks} blocks")
    r = arr.reshape(n, c, blocks, h // blocks, blocks, w // blocks)
    return r.mean(axis=(3, 5)).reshape(n, -1)


_SINGULAR_EIG = 1e-10
_RIDGE = 1e-6


def moment_distance_detailed(
    set_a: np.ndarray, set_b: np.ndarray, blocks: int = 4
) -> tuple[float, bool]:
    """Frechet distance between Gaussian fits; ridge applied when singular.

    Returns (distance, ridge_used). Each set needs at least 2 images.
    """
    fa = block_mean_features(set_a, blocks)
    fb = block_mean_features(set_b, blocks)
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise ValueError("each set needs at least 2 images for a covariance")
    if fa.shape[1] != fb.shape[1]:
        raise ValueError("feature widths differ between sets")
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.cov(fa, rowvar=False, ddof=1)
    cov_b = np.cov(fb, rowvar=False, ddof=1)
    ridge_used = False
    min_eig = min(
        float(np.linalg.eigvalsh(cov_a).min()), float(np.linalg.eigvalsh(cov_b).min())
    )
    if min_eig < _SINGULAR_EIG:
        eye = np.eye(cov_a.shape[0])
        cov_a = cov_a + _RIDGE * eye
        cov_b = cov_b + _RIDGE * eye
        ridge_used = True
    return frechet_gaussian(mu_a, cov_a, mu_b, cov_b), ridge_used


def moment_distance(set_a: np.ndarray, set_b: np.ndarray, blocks: int = 4) -> float:
    return moment_distance_detailed(set_a, set_b, blocks)[0]


# -- rank correlation ---------------------------------------------------------


def _ranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based), ties averaged."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    x, y = np.asarray(x, np.float64), np.asarray(y, np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman expects two equal-length 1-D arrays")
    if len(x) < 2:
        raise ValueError("need at least 2 points")
    rx, ry = _ranks(x), _ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if denom == 0.0:
        return 0.0
    return float((rx * ry).sum() / denom)


# -- pixel statistics for fidelity probing -------------------------------------


def _to_unit(images: np.ndarray) -> np.ndarray:
    return (np.asarray(images, dtype=np.float64) + 1.0) * 0.5


def mean_luminance(images: np.ndarray) -> float:
    """Rec.709 luma mean over a batch of [-1, 1] RGB images."""
    u = _to_unit(images)
    return float((0.2126 * u[:, 0] + 0.7152 * u[:, 1] + 0.0722 * u[:, 2]).mean())


def mean_green(images: np.ndarray) -> float:
    return float(_to_unit(images)[:, 1].mean())


WATER_MARGIN = 0.05


def water_fraction(images: np.ndarray) -> float:
    """Fraction of pixels whose blue exceeds both red and green by a margin."""
    u = _to_unit(images)
    excess = u[:, 2] - np.maximum(u[:, 0], u[:, 1])
    return float((excess > WATER_MARGIN).mean())


PROBE_STATISTICS = {
    "tcc": ("mean_luminance", mean_luminance),
    "ssr": ("mean_green", mean_green),
    "tp": ("water_fraction", water_fraction),
}


# -- recoverability probe -------------------------------------------------------


@dataclass
class RecoverabilityReport:
    strategies: list[str]
    missing_counts: list[int]
    trials: int
    samples: int
    # mae[strategy][missing_count] -> one dict per trial: attribute -> MAE
    mae: dict[str, dict[int, list[dict[str, float]]]] = field(default_factory=dict)

    def mean_mae(self, strategy: str, missing: int) -> dict[str, float]:
        rows = self.mae[strategy][missing]
        out: dict[str, list[float]] = {}
        for row in rows:
            for k, v in row.items():
                out.setdefault(k, []).append(v)
        return {k: float(np.mean(v)) for k, v in out.items()}

    def overall_mae(self, strategy: str, missing: int) -> float:
        per_attr = self.mean_mae(strategy, missing)
        return float(np.mean(list(per_attr.values())))

    def to_dict(self) -> dict:
        return {
            "strategies": self.strategies,
            "missing_counts": self.missing_counts,
            "trials": self.trials,
            "samples": self.samples,
            "mean_mae": {
                s: {str(c): self.mean_mae(s, c) for c in self.missing_counts}
                for s in self.strategies
            },
            "overall_mae": {
                s: {str(c): self.overall_mae(s, c) for c in self.missing_counts}
                for s in self.strategies
            },
            "per_trial": {
                s: {str(c): self.mae[s][c] for c in self.missing_counts}
                for s in self.strategies
            },
        }


def _ridge_fit(
    features: np.ndarray, targets: np.ndarray, ridge: float
) -> np.ndarray:
    """Ridge least squares with intercept; returns (d+1, k) weights."""
    a = np.concatenate([features, np.ones((len(features), 1))], axis=1)
    gram = a.T @ a + ridge * np.eye(a.shape[1])
    return np.linalg.solve(gram, a.T @ targets)


def _ridge_predict(features: np.ndarray, w: np.ndarray) -> np.ndarray:
    a = np.concatenate([features, np.ones((len(features), 1))], axis=1)
    return a @ w


def recoverability_probe(
    strategies: tuple[str, ...] = ("additive", "concat"),
    *,
    trials: int = 20,
    samples: int = 2000,
    missing_counts: tuple[int, ...] = (0, 3, 5, 7),
    seed: int = 0,
    sin_dim: int = 32,
    hidden: int = 64,
    embed_dim: int = 32,
    ridge: float = 1e-6,
    train_fraction: float = 0.75,
    encoder_factory=None,
) -> RecoverabilityReport:
    """How well a linear probe recovers normalized values from the fused representation.

    The probed representation is the one each strategy hands downstream before
    any shared projection: the D-dim slot sum for additive fusion, the M*D-dim
    concatenation (masked slots zeroed) for concat fusion. Addition collapses
    the slots into one subspace, concatenation keeps them linearly separable;
    the probe measures exactly that difference.

    Each trial instantiates fresh randomly initialized embedders (shared by
    both strategies, so comparisons are paired), draws uniform normalized
    values, fixes one missing-attribute subset per (trial, count), and fits a
    ridge probe from the representation back to the present attributes.
    Reported MAE lives on the normalized [0, 1000] scale, held-out split.

    encoder_factory, if given, is called once per trial (after the trial seed
    is set) and must return a MetadataEncoder; it exists so callers can probe
    hand-constructed embeddings, e.g. identity-like ones.
    """
    report = RecoverabilityReport(
        strategies=list(strategies),
        missing_counts=list(missing_counts),
        trials=trials,
        samples=samples,
        mae={s: {c: [] for c in missing_counts} for s in strategies},
    )
    cfg = SinusoidConfig(dim=sin_dim)
    n_train = int(samples * train_fraction)
    if n_train < 1 or n_train >= samples:
        raise ValueError("train_fraction leaves an empty split")
    for trial in range(trials):
        torch.manual_seed(seed * 1_000_003 + trial)
        if encoder_factory is None:
            encoder = MetadataEncoder(cfg, hidden=hidden, out_dim=embed_dim).double()
        else:
            encoder = encoder_factory().double()
        rng = np.random.default_rng(seed * 1_000_003 + trial)
        values = rng.uniform(0.0, 1000.0, size=(samples, NUM_ATTRIBUTES))
        vt = torch.from_numpy(values)
        with torch.no_grad():
            slots_full = encoder(vt, torch.ones(samples, NUM_ATTRIBUTES, dtype=torch.bool))
        for count in missing_counts:
            missing = rng.choice(NUM_ATTRIBUTES, size=count, replace=False)
            mask_row = np.ones(NUM_ATTRIBUTES, dtype=bool)
            mask_row[missing] = False
            mask = torch.from_numpy(np.tile(mask_row, (samples, 1)))
            bundle = EmbeddingBundle(slots=slots_full, mask=mask)
            fused = {}
            with torch.no_grad():
                if "additive" in strategies:
                    fused["additive"] = fuse_additive(bundle).numpy()
                if "concat" in strategies:
                    fused["concat"] = bundle.slots.reshape(samples, -1).numpy()
            present_idx = [j for j in range(NUM_ATTRIBUTES) if mask_row[j]]
            targets = values[:, present_idx]
            for strategy in strategies:
                x = fused[strategy]
                w = _ridge_fit(x[:n_train], targets[:n_train], ridge)
                pred = _ridge_predict(x[n_train:], w)
                err = np.abs(pred - targets[n_train:]).mean(axis=0)
                report.mae[strategy][count].append(
                    {ATTRIBUTE_ORDER[j]: float(e) for j, e in zip(present_idx, err)}
                )
    return report


# -- fidelity probe --------------------------------------------------------------


@dataclass
class FidelityReport:
    attribute: str
    statistic: str
    values: list[float]
    per_seed: list[list[float]]  # [seed][sweep point]
    mean_curve: list[float]
    spearman_mean_curve: float
    spearman_per_seed: list[float]

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "statistic": self.statistic,
            "values": self.values,
            "per_seed": self.per_seed,
            "mean_curve": self.mean_curve,
            "spearman_mean_curve": self.spearman_mean_curve,
            "spearman_per_seed": self.spearman_per_seed,
        }


def fidelity_probe(
    model,
    attribute: str,
    *,
    num_points: int = 11,
    seeds: int = 8,
    steps: int = 100,
    guidance: float = 1.0,
    seed0: int = 0,
    base_meta: dict[str, float] | None = None,
    caption: str = "a satellite image",
) -> FidelityReport:
    """Sweep one attribute through a trained model; rank-correlate a statistic.

    The sweep spans the model's normalization range for the attribute over
    num_points even steps. Within a seed the initial noise is shared across
    sweep points, so the statistic moves only because the conditioning does.
    """
    from .attributes import MetadataRecord

    if attribute not in PROBE_STATISTICS:
        raise ValueError(
            f"no statistic defined for {attribute!r}; choose from {sorted(PROBE_STATISTICS)}"
        )
    stat_name, stat_fn = PROBE_STATISTICS[attribute]
    spec = next(s for s in model.specs if s.name == attribute)
    values = np.linspace(spec.minimum, spec.maximum, num_points)

    if base_meta is None:
        base_meta = {
            s.name: (s.minimum + s.maximum) / 2.0 for s in model.specs
        }
        base_meta["month"] = 7.0
        base_meta["day"] = 15.0
    per_seed: list[list[float]] = []
    size = model.config.image_size
    for s in range(seeds):
        gen = torch.Generator().manual_seed(seed0 * 7919 + s)
        x_init = torch.randn(
            1, model.config.channels, size, size, generator=gen,
            dtype=next(model.parameters()).dtype,
        )
        row = []
        for v in values:
            meta = dict(base_meta)
            meta[attribute] = float(v)
            record = MetadataRecord.complete(meta)
            packet = model.metadata_packet([record], [caption])
            sample = model.sample(
                packet, steps=steps, guidance=guidance, x_init=x_init
            )
            row.append(stat_fn(sample.numpy()))
        per_seed.append(row)
    arr = np.asarray(per_seed)
    mean_curve = arr.mean(axis=0)
    return FidelityReport(
        attribute=attribute,
        statistic=stat_name,
        values=[float(v) for v in values],
        per_seed=[[float(x) for x in row] for row in per_seed],
        mean_curve=[float(x) for x in mean_curve],
        spearman_mean_curve=spearman(values, mean_curve),
        spearman_per_seed=[float(spearman(values, row)) for row in arr],
    )
