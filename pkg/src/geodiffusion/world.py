"""Procedural synthetic world: terrain, climate effects, grid files, stubs.

Every location owns one grid cell (centroid jittered inside it) and a fixed
value-noise terrain keyed on its coordinates; each frame draws climate values
that are quantized to float32 BEFORE rendering and written into the cell's
120-hour window, so the dataset build recovers exactly the values the
renderer saw. Climate effects, in order: vegetation green from season x
radiation, global brightness from radiation, standing water from
precipitation, blur from wind speed, white blend from cloud cover.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .alignment import ImageStub, write_stubs
from .attributes import GRID_CODES
from .grid import GridIndex, write_grid

WINDOW_HOURS = 120


@dataclass(frozen=True)
class WorldGains:
    cloud_whiteness: float = 0.9
    season_green: float = 0.5
    radiation_brightness: float = 0.5
    wind_blur: float = 1.5
    precip_water: float = 0.35


DEFAULT_CLASSES = (
    "farmland",
    "forest",
    "lake",
    "airport",
    "stadium",
    "harbor",
    "quarry",
    "vineyard",
    "solar farm",
    "railway yard",
)

DEFAULT_COUNTRIES = (
    "norway",
    "france",
    "egypt",
    "kenya",
    "india",
    "japan",
    "australia",
    "brazil",
)

# Raw-value draw ranges for the climate variables (SI-ish units).
DEFAULT_CLIMATE_RANGES: dict[str, tuple[float, float]] = {
    "t2m": (250.0, 310.0),
    "tp": (0.0, 0.02),
    "u10": (-12.0, 12.0),
    "v10": (-12.0, 12.0),
    "ssr": (0.0, 3.0e7),
    "tcc": (0.0, 1.0),
    "d2m": (245.0, 300.0),
}


@dataclass
class WorldConfig:
    seed: int = 0
    n_images: int = 4000
    # 200 locations x 20 frames: enough per-location history for sequence
    # models and enough distinct locations for 200-item held-out splits
    image_size: int = 32
    frames_per_location: int = 20
    nlat: int = 12
    nlon: int = 20
    lat0: float = -38.5
    lon0: float = -171.0
    dlat: float = 7.0
    dlon: float = 18.0
    base_epoch_hour: int = 447072  # 2021-01-01T00Z
    slot_count: int = 60
    slot_stride_hours: int = 140  # > window, so per-location windows never overlap
    gsd_range: tuple[float, float] = (0.3, 1.5)
    classes: tuple[str, ...] = DEFAULT_CLASSES
    countries: tuple[str, ...] = DEFAULT_COUNTRIES
    gains: WorldGains = field(default_factory=WorldGains)
    climate_ranges: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_CLIMATE_RANGES)
    )

    def __post_init__(self) -> None:
        if self.slot_stride_hours <= WINDOW_HOURS:
            raise ValueError("slot stride must exceed the aggregation window")
        if self.frames_per_location > self.slot_count:
            raise ValueError("not enough slots for frames_per_location")
        n_loc = -(-self.n_images // self.frames_per_location)
        if n_loc > self.nlat * self.nlon:
            raise ValueError(
                f"{self.n_images} images need {n_loc} locations but the grid has "
                f"{self.nlat * self.nlon} cells"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gains"] = asdict(self.gains)
        return d


def _location_seed(world_seed: int, latitude: float, longitude: float) -> int:
    blob = struct.pack("<qdd", world_seed, latitude, longitude)
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def _bilinear_upsample(lattice: np.ndarray, size: int) -> np.ndarray:
    n = lattice.shape[0]
    pos = np.linspace(0.0, n - 1.0, size)
    i0 = np.clip(pos.astype(int), 0, n - 2)
    frac = pos - i0
    rows = lattice[i0] * (1.0 - frac)[:, None] + lattice[i0 + 1] * frac[:, None]
    cols = rows[:, i0] * (1.0 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]
    return cols


def terrain_height(loc_seed: int, size: int) -> np.ndarray:
    """Two-octave value noise in [0, 1], fixed per location."""
    rng = np.random.default_rng(loc_seed)
    coarse = _bilinear_upsample(rng.random((5, 5)), size)
    fine = _bilinear_upsample(rng.random((9, 9)), size)
    h = 0.65 * coarse + 0.35 * fine
    lo, hi = h.min(), h.max()
    return (h - lo) / (hi - lo) if hi > lo else np.full_like(h, 0.5)


_MOTIF_PALETTE = (
    (0.72, 0.62, 0.30),
    (0.15, 0.42, 0.18),
    (0.55, 0.55, 0.60),
    (0.70, 0.30, 0.25),
    (0.25, 0.28, 0.33),
    (0.60, 0.45, 0.55),
)


def _class_motif(size: int, class_index: int) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Boolean mask + color for the class-specific geometric overlay."""
    y, x = np.mgrid[0:size, 0:size]
    cy = cx = (size - 1) / 2.0
    r = size / 4.0
    shape = class_index % 6
    if shape == 0:
        mask = (y - cy) ** 2 + (x - cx) ** 2 <= r * r
    elif shape == 1:
        d2 = (y - cy) ** 2 + (x - cx) ** 2
        mask = (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    elif shape == 2:
        mask = (np.abs(y - cy) <= r * 0.8) & (np.abs(x - cx) <= r * 0.8)
    elif shape == 3:
        mask = (np.abs(y - cy) <= r * 0.35) | (np.abs(x - cx) <= r * 0.35)
    elif shape == 4:
        mask = ((x // max(2, size // 8)) % 2 == 0) & (np.abs(y - cy) <= r)
    else:
        mask = (np.abs(y - cy) + np.abs(x - cx)) <= r * 1.2
    return mask, _MOTIF_PALETTE[class_index % len(_MOTIF_PALETTE)]


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma < 1e-3:
        return img
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (xs / sigma) ** 2)
    taps /= taps.sum()
    size = img.shape[-1]
    out = np.pad(img, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    out = sum(w * out[:, k : k + size, :] for k, w in enumerate(taps))
    out = np.pad(out, ((0, 0), (0, 0), (radius, radius)), mode="reflect")
    out = sum(w * out[:, :, k : k + size] for k, w in enumerate(taps))
    return out


def season_factor(month: float) -> float:
    """0 at midwinter (January), 1 at midsummer (July)."""
    return 0.5 * (1.0 - math.cos(2.0 * math.pi * (month - 1.0) / 12.0))


def render(meta: dict[str, float], object_class: str, cfg: WorldConfig) -> np.ndarray:
    """Render one frame to float64 (3, S, S) in [-1, 1], fully deterministic."""
    size = cfg.image_size
    loc_seed = _location_seed(cfg.seed, meta["latitude"], meta["longitude"])
    height = terrain_height(loc_seed, size)

    img = np.empty((3, size, size), dtype=np.float64)
    img[0] = 0.30 + 0.35 * height
    img[1] = 0.32 + 0.30 * height
    img[2] = 0.22 + 0.18 * height
    if object_class in cfg.classes:
        mask, color = _class_motif(size, cfg.classes.index(object_class))
        for c in range(3):
            img[c][mask] = 0.15 * img[c][mask] + 0.85 * color[c]

    def unit(name: str) -> float:
        lo, hi = cfg.climate_ranges[name]
        return min(max((meta[name] - lo) / (hi - lo), 0.0), 1.0) if hi > lo else 0.5

    ssr_n, tp_n, tcc_n = unit("ssr"), unit("tp"), unit("tcc")
    g = cfg.gains

    img[1] *= 1.0 + g.season_green * season_factor(meta["month"]) * ssr_n
    img *= 0.75 + g.radiation_brightness * ssr_n

    water_frac = min(max(g.precip_water * tp_n, 0.0), 0.5)
    if water_frac > 0.0:
        water = height < np.quantile(height, water_frac)
        img[0][water] = 0.07
        img[1][water] = 0.11
        img[2][water] = 0.58

    u_lo, u_hi = cfg.climate_ranges["u10"]
    v_lo, v_hi = cfg.climate_ranges["v10"]
    wind_max = math.hypot(max(abs(u_lo), abs(u_hi)), max(abs(v_lo), abs(v_hi)))
    wind_n = min(math.hypot(meta["u10"], meta["v10"]) / wind_max, 1.0)
    img = _gaussian_blur(img, g.wind_blur * wind_n)

    alpha = min(max(g.cloud_whiteness * tcc_n, 0.0), 1.0)
    img = (1.0 - alpha) * img + alpha

    return np.clip(img, 0.0, 1.0) * 2.0 - 1.0


def save_png(path: str | Path, img: np.ndarray) -> None:
    """Quantize [-1, 1] float to 8-bit RGB."""
    arr = np.clip((np.asarray(img) + 1.0) * 0.5, 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(u8, mode="RGB").save(path)


def load_png(path: str | Path) -> np.ndarray:
    """PNG back to float32 (3, S, S) in [-1, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return (arr / 255.0 * 2.0 - 1.0).transpose(2, 0, 1)


def make_world(cfg: WorldConfig, out_dir: str | Path) -> tuple[list[ImageStub], GridIndex]:
    """Write images/, grid/ and stubs.jsonl under out_dir; return the objects.

    The float32 quantization order is the exactness contract: each climate
    value is quantized first, the quantized value fills the grid window AND
    drives the renderer, so alignment reproduces rendering inputs bit for bit.
    Radiation is stored per hour as float32(value / window) and the metadata
    value is defined as window * that, which float64 carries exactly.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    hour_count = WINDOW_HOURS + (cfg.slot_count - 1) * cfg.slot_stride_hours + 1
    fill = {
        name: np.float32((lo + hi) / 2.0)
        for name, (lo, hi) in cfg.climate_ranges.items()
    }
    fields = {
        GRID_CODES[name]: np.full(
            (hour_count, cfg.nlat, cfg.nlon), fill[name], dtype=np.float32
        )
        for name in GRID_CODES
    }
    grid = GridIndex(
        lat0=cfg.lat0,
        lon0=cfg.lon0,
        dlat=cfg.dlat,
        dlon=cfg.dlon,
        nlat=cfg.nlat,
        nlon=cfg.nlon,
        hour_start=cfg.base_epoch_hour,
        hour_count=hour_count,
        fields=fields,
    )

    n_loc = -(-cfg.n_images // cfg.frames_per_location)
    cells = rng.permutation(cfg.nlat * cfg.nlon)[:n_loc]
    stubs: list[ImageStub] = []
    remaining = cfg.n_images
    for loc, cell in enumerate(cells):
        li, lj = int(cell) // cfg.nlon, int(cell) % cfg.nlon
        lat = cfg.lat0 + cfg.dlat * li + cfg.dlat * rng.uniform(-0.3, 0.3)
        lon = cfg.lon0 + cfg.dlon * lj + cfg.dlon * rng.uniform(-0.3, 0.3)
        object_class = cfg.classes[int(rng.integers(len(cfg.classes)))]
        country = cfg.countries[
            int((lon + 180.0) / 360.0 * len(cfg.countries)) % len(cfg.countries)
        ]
        gsd = float(rng.uniform(*cfg.gsd_range))

        k = min(cfg.frames_per_location, remaining)
        remaining -= k
        slots = np.sort(rng.choice(cfg.slot_count, size=k, replace=False))
        for f, slot in enumerate(slots):
            hour = cfg.base_epoch_hour + (WINDOW_HOURS - 1) + int(slot) * cfg.slot_stride_hours
            capture_time = hour * 3600 + int(rng.integers(3600))
            h_idx = hour - cfg.base_epoch_hour
            window = slice(h_idx - (WINDOW_HOURS - 1), h_idx + 1)

            meta: dict[str, float] = {}
            for name, (lo, hi) in cfg.climate_ranges.items():
                draw = rng.uniform(lo, hi)
                if name == "ssr":
                    hourly = np.float32(draw / WINDOW_HOURS)
                    fields[GRID_CODES[name]][window, li, lj] = hourly
                    meta[name] = WINDOW_HOURS * float(hourly)
                else:
                    q = np.float32(draw)
                    fields[GRID_CODES[name]][window, li, lj] = q
                    meta[name] = float(q)

            tm = time.gmtime(capture_time)
            meta.update(
                latitude=lat,
                longitude=lon,
                gsd=gsd,
                year=float(tm.tm_year),
                month=float(tm.tm_mon),
                day=float(tm.tm_mday),
            )
            stub_id = f"loc{loc:05d}_f{f:02d}"
            rel = f"images/{stub_id}.png"
            save_png(out / rel, render(meta, object_class, cfg))
            stubs.append(
                ImageStub(
                    id=stub_id,
                    image=rel,
                    capture_time=capture_time,
                    latitude=lat,
                    longitude=lon,
                    gsd=gsd,
                    object_class=object_class,
                    country=country,
                )
            )
        if remaining == 0:
            break

    write_grid(out / "grid", grid)
    write_stubs(out / "stubs.jsonl", stubs)
    (out / "world_config.json").write_text(
        json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return stubs, grid
