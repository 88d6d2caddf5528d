"""Aligning image stubs with gridded climate data and building the manifest.

For every stub: find the most recent grid hour at or before the capture time,
pick the nearest grid cell to the image centroid by great-circle distance
(longitude wraps), then read each climate variable either at the matched hour
or reduced over the 120 hourly samples ending at it. Stubs that cannot be
aligned are skipped with a reason, never silently dropped.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attributes import (
    AGGREGATION,
    ATTRIBUTE_ORDER,
    CLIMATE_ATTRIBUTES,
    FIXED_RANGES,
    GRID_CODES,
)
from .captions import Caption, render_caption
from .grid import GridIndex

WINDOW_HOURS = 120  # 5 days of hourly samples


class SkipRecord(Exception):
    """Raised when a stub cannot be aligned; .reason feeds the skip summary."""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


@dataclass
class ImageStub:
    """One captured image before climate alignment."""

    id: str
    image: str
    capture_time: int  # epoch seconds, UTC
    latitude: float
    longitude: float
    gsd: float
    object_class: str | None = None
    country: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image,
            "capture_time": self.capture_time,
            "latitude": self.latitude,
            "longitude": self.longitude,
            "gsd": self.gsd,
            "object_class": self.object_class,
            "country": self.country,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageStub":
        return cls(**d)


def write_stubs(path: str | Path, stubs: list[ImageStub]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in stubs:
            f.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def read_stubs(path: str | Path) -> list[ImageStub]:
    stubs = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                stubs.append(ImageStub.from_dict(json.loads(line)))
    return stubs


def match_hour(capture_time: float, grid: GridIndex) -> int:
    """Most recent grid hour at or before the capture instant."""
    hour = int(np.floor(capture_time / 3600.0))
    if hour < grid.hour_start:
        raise SkipRecord("capture before grid coverage")
    return min(hour, grid.last_hour)


def nearest_cell(latitude: float, longitude: float, grid: GridIndex) -> tuple[int, int]:
    """Grid cell whose center is closest by great-circle distance.

    Longitude differences wrap (|dlon| folded into [0, 180]). Ties resolve to
    the smaller latitude index, then the smaller longitude index.
    """
    lats, lons = grid.cell_centers()
    phi1 = np.radians(latitude)
    phi2 = np.radians(lats)[:, None]
    dphi = phi2 - phi1
    dlon = np.abs(lons[None, :] - longitude) % 360.0
    dlon = np.where(dlon > 180.0, 360.0 - dlon, dlon)
    dlmb = np.radians(dlon)
    h = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    flat = int(np.argmin(h))  # row-major: lat index first, then lon
    return flat // grid.nlon, flat % grid.nlon


def window_series(
    grid: GridIndex, code: str, matched_hour: int, lat_idx: int, lon_idx: int
) -> np.ndarray:
    """The 120 hourly float32 samples ending at (and including) matched_hour."""
    end = grid.hour_index(matched_hour)
    start = end - (WINDOW_HOURS - 1)
    if start < 0:
        raise SkipRecord("insufficient window history")
    return grid.fields[code][start : end + 1, lat_idx, lon_idx]


def aggregate_window(series: np.ndarray, how: str) -> float:
    """Reduce a window in float64: avg5d -> mean, sum5d -> sum."""
    s = np.asarray(series, dtype=np.float64)
    if s.ndim != 1 or s.size != WINDOW_HOURS:
        raise ValueError(f"window must hold {WINDOW_HOURS} samples, got {s.shape}")
    if how == "avg5d":
        return float(s.sum() / WINDOW_HOURS)
    if how == "sum5d":
        return float(s.sum())
    raise ValueError(f"no window aggregation named {how!r}")


def climate_values(
    stub: ImageStub, grid: GridIndex
) -> tuple[dict[str, float], int, tuple[int, int]]:
    """All seven climate attributes for one stub, plus the match it used."""
    hour = match_hour(stub.capture_time, grid)
    cell = nearest_cell(stub.latitude, stub.longitude, grid)
    values: dict[str, float] = {}
    for name in CLIMATE_ATTRIBUTES:
        code = GRID_CODES[name]
        how = AGGREGATION[name]
        if how == "none":
            values[name] = grid.value(code, hour, *cell)
        else:
            values[name] = aggregate_window(window_series(grid, code, hour, *cell), how)
    return values, hour, cell


@dataclass
class ManifestEntry:
    id: str
    image: str
    caption: str
    object_class: str | None
    country: str | None
    meta: dict[str, float]
    present: dict[str, bool]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image,
            "caption": self.caption,
            "class": self.object_class,
            "country": self.country,
            "meta": self.meta,
            "present": self.present,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(
            id=d["id"],
            image=d["image"],
            caption=d["caption"],
            object_class=d.get("class"),
            country=d.get("country"),
            meta={k: float(v) for k, v in d["meta"].items()},
            present={k: bool(v) for k, v in d["present"].items()},
        )


@dataclass
class DatasetManifest:
    """Header (normalization ranges + counts) plus one entry per image."""

    normalization: dict[str, tuple[float, float]]
    entries: list[ManifestEntry]
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def ranges(self) -> dict[str, tuple[float, float]]:
        return dict(self.normalization)


def build_manifest(stubs: list[ImageStub], grid: GridIndex) -> DatasetManifest:
    """Align every stub; collect dataset min/max for the unbounded attributes.

    Deterministic: stubs are processed in id order and captions render without
    clause dropout (training applies its own dropout per presentation).
    """
    entries: list[ManifestEntry] = []
    skipped: dict[str, int] = {}
    for stub in sorted(stubs, key=lambda s: s.id):
        try:
            climate, _, _ = climate_values(stub, grid)
        except SkipRecord as e:
            skipped[e.reason] = skipped.get(e.reason, 0) + 1
            continue
        tm = time.gmtime(stub.capture_time)
        meta = {
            "longitude": stub.longitude,
            "latitude": stub.latitude,
            "year": float(tm.tm_year),
            "month": float(tm.tm_mon),
            "day": float(tm.tm_mday),
            "gsd": stub.gsd,
            **climate,
        }
        entries.append(
            ManifestEntry(
                id=stub.id,
                image=stub.image,
                caption=render_caption(Caption(stub.object_class, stub.country)),
                object_class=stub.object_class,
                country=stub.country,
                meta={name: float(meta[name]) for name in ATTRIBUTE_ORDER},
                present={name: True for name in ATTRIBUTE_ORDER},
            )
        )
    if not entries:
        raise ValueError("no stubs could be aligned; nothing to write")
    normalization = {}
    for name in ATTRIBUTE_ORDER:
        if name in FIXED_RANGES:
            continue
        vals = [e.meta[name] for e in entries]
        normalization[name] = (min(vals), max(vals))
    return DatasetManifest(normalization=normalization, entries=entries, skipped=skipped)


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    header = {
        "normalization": {k: list(v) for k, v in sorted(manifest.normalization.items())},
        "count": len(manifest.entries),
        "skipped": dict(sorted(manifest.skipped.items())),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for e in manifest.entries:
            f.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in (line.strip() for line in f) if ln]
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if "normalization" not in header:
        raise ValueError(f"{path}: first line is not a manifest header")
    normalization = {
        k: (float(v[0]), float(v[1])) for k, v in header["normalization"].items()
    }
    entries = [ManifestEntry.from_dict(json.loads(ln)) for ln in lines[1:]]
    if len(entries) != int(header.get("count", len(entries))):
        raise ValueError(f"{path}: header count does not match entry lines")
    return DatasetManifest(
        normalization=normalization,
        entries=entries,
        skipped={k: int(v) for k, v in header.get("skipped", {}).items()},
    )
