"""Hourly gridded climate fields on disk.

A grid directory holds a plain-text ``grid.meta`` (key=value lines: lat0,
lon0, dlat, dlon, nlat, nlon, hour_start, hour_count) and one raw file per
variable code (``2t.f32``, ``tp.f32``, ...): little-endian float32, row-major
[hour][lat][lon]. lat0/lon0 are the center of cell (0, 0); hour indices are
absolute epoch hours (hours since 1970-01-01T00Z).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attributes import GRID_CODES

META_NAME = "grid.meta"
_INT_KEYS = ("nlat", "nlon", "hour_start", "hour_count")
_FLOAT_KEYS = ("lat0", "lon0", "dlat", "dlon")


@dataclass
class GridIndex:
    lat0: float
    lon0: float
    dlat: float
    dlon: float
    nlat: int
    nlon: int
    hour_start: int
    hour_count: int
    fields: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.nlat < 1 or self.nlon < 1 or self.hour_count < 1:
            raise ValueError("grid dimensions must be positive")
        if self.dlat <= 0 or self.dlon <= 0:
            raise ValueError("grid spacing must be positive")
        shape = (self.hour_count, self.nlat, self.nlon)
        for code, arr in self.fields.items():
            if arr.shape != shape:
                raise ValueError(
                    f"field {code!r} has shape {arr.shape}, expected {shape}"
                )

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        lats = self.lat0 + self.dlat * np.arange(self.nlat)
        lons = self.lon0 + self.dlon * np.arange(self.nlon)
        return lats, lons

    def hour_index(self, epoch_hour: int) -> int:
        idx = int(epoch_hour) - self.hour_start
        if not 0 <= idx < self.hour_count:
            raise IndexError(f"hour {epoch_hour} outside grid coverage")
        return idx

    @property
    def last_hour(self) -> int:
        return self.hour_start + self.hour_count - 1

    def value(self, code: str, epoch_hour: int, lat_idx: int, lon_idx: int) -> float:
        return float(self.fields[code][self.hour_index(epoch_hour), lat_idx, lon_idx])


def write_grid(dirpath: str | Path, grid: GridIndex) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    lines = [
        f"lat0={grid.lat0!r}",
        f"lon0={grid.lon0!r}",
        f"dlat={grid.dlat!r}",
        f"dlon={grid.dlon!r}",
        f"nlat={grid.nlat}",
        f"nlon={grid.nlon}",
        f"hour_start={grid.hour_start}",
        f"hour_count={grid.hour_count}",
    ]
    (d / META_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for code, arr in grid.fields.items():
        arr.astype("<f4").tofile(d / f"{code}.f32")


def read_grid(dirpath: str | Path) -> GridIndex:
    d = Path(dirpath)
    meta_path = d / META_NAME
    if not meta_path.is_file():
        raise FileNotFoundError(f"{meta_path} not found")
    kv: dict[str, str] = {}
    for lineno, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{meta_path}:{lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    missing = [k for k in (*_FLOAT_KEYS, *_INT_KEYS) if k not in kv]
    if missing:
        raise ValueError(f"{meta_path}: missing keys {missing}")
    args = {k: float(kv[k]) for k in _FLOAT_KEYS}
    args.update({k: int(kv[k]) for k in _INT_KEYS})
    grid = GridIndex(**args)

    shape = (grid.hour_count, grid.nlat, grid.nlon)
    expected = int(np.prod(shape))
    for code in GRID_CODES.values():
        f = d / f"{code}.f32"
        if not f.is_file():
            raise FileNotFoundError(f"grid variable file {f} not found")
        arr = np.fromfile(f, dtype="<f4")
        if arr.size != expected:
            raise ValueError(
                f"{f}: holds {arr.size} values, expected {expected} for shape {shape}"
            )
        grid.fields[code] = arr.reshape(shape)
    return grid
