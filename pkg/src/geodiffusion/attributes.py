"""Metadata attribute registry and value normalization.

Every image carries up to 13 scalar attributes: capture geometry (longitude,
latitude, gsd), capture date (year, month, day) and seven reanalysis-derived
climate variables. Order is significant everywhere (embedding slots, checkpoint
layout, manifest columns), so the canonical order lives here and nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field


# Canonical attribute order. Embedding slot j, checkpoint record j and manifest
# column j all refer to ATTRIBUTE_ORDER[j].
ATTRIBUTE_ORDER: tuple[str, ...] = (
    "longitude",
    "latitude",
    "year",
    "month",
    "day",
    "gsd",
    "t2m",
    "tp",
    "u10",
    "v10",
    "ssr",
    "tcc",
    "d2m",
)

NUM_ATTRIBUTES = len(ATTRIBUTE_ORDER)

# Raw variable codes used by the gridded-climate file layer.
GRID_CODES: dict[str, str] = {
    "t2m": "2t",
    "tp": "tp",
    "u10": "10u",
    "v10": "10v",
    "ssr": "ssr",
    "tcc": "tcc",
    "d2m": "2d",
}

CLIMATE_ATTRIBUTES: tuple[str, ...] = tuple(GRID_CODES)

# How each climate variable is reduced over the 5-day window before the
# capture hour. Instantaneous variables average; accumulated radiation sums.
AGGREGATION: dict[str, str] = {
    "t2m": "avg5d",
    "tp": "avg5d",
    "u10": "avg5d",
    "v10": "avg5d",
    "ssr": "sum5d",
    "tcc": "none",
    "d2m": "avg5d",
}

# Attributes whose normalization range is physically fixed rather than taken
# from the dataset. Longitude is half-open: 180 aliases to -180.
FIXED_RANGES: dict[str, tuple[float, float]] = {
    "longitude": (-180.0, 180.0),
    "latitude": (-90.0, 90.0),
    "month": (1.0, 12.0),
    "tcc": (0.0, 1.0),
}

NORMALIZED_MAX = 1000.0


@dataclass(frozen=True)
class AttributeSpec:
    """One attribute's identity and normalization range."""

    name: str
    index: int
    minimum: float
    maximum: float
    aggregation: str = "none"

    def __post_init__(self) -> None:
        if self.name not in ATTRIBUTE_ORDER:
            raise ValueError(f"unknown attribute {self.name!r}")
        if self.aggregation not in ("none", "avg5d", "sum5d"):
            raise ValueError(f"bad aggregation {self.aggregation!r}")
        if not (self.minimum <= self.maximum):
            raise ValueError(
                f"{self.name}: minimum {self.minimum} > maximum {self.maximum}"
            )


class ClampCounter:
    """Counts out-of-range normalizations per attribute. Never raises."""

    def __init__(self) -> None:
        self.counts: dict[str, int] = {}

    def bump(self, name: str) -> None:
        self.counts[name] = self.counts.get(name, 0) + 1

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def summary(self) -> str:
        if not self.counts:
            return "no values clamped"
        parts = [f"{k}={v}" for k, v in sorted(self.counts.items())]
        return "clamped: " + ", ".join(parts)


def make_specs(dataset_ranges: dict[str, tuple[float, float]]) -> list[AttributeSpec]:
    """Build the full 13-spec table.

    ``dataset_ranges`` must supply (min, max) for every attribute without a
    fixed physical range: year, day, gsd, t2m, tp, u10, v10, ssr, d2m.
    """
    specs = []
    for i, name in enumerate(ATTRIBUTE_ORDER):
        if name in FIXED_RANGES:
            lo, hi = FIXED_RANGES[name]
        else:
            if name not in dataset_ranges:
                raise ValueError(f"dataset range required for attribute {name!r}")
            lo, hi = dataset_ranges[name]
        specs.append(
            AttributeSpec(
                name=name,
                index=i,
                minimum=float(lo),
                maximum=float(hi),
                aggregation=AGGREGATION.get(name, "none"),
            )
        )
    return specs


def normalize(value: float, spec: AttributeSpec, counter: ClampCounter | None = None) -> float:
    """Map a raw attribute value onto [0, 1000].

    Values outside [minimum, maximum] clamp to the boundary and bump the
    counter; a degenerate range (min == max) maps everything to 500.
    """
    lo, hi = spec.minimum, spec.maximum
    if hi == lo:
        return NORMALIZED_MAX / 2.0
    v = float(value)
    if v < lo or v > hi:
        if counter is not None:
            counter.bump(spec.name)
        v = min(max(v, lo), hi)
    return NORMALIZED_MAX * (v - lo) / (hi - lo)


def denormalize(scaled: float, spec: AttributeSpec) -> float:
    """Inverse of :func:`normalize` for in-range values."""
    lo, hi = spec.minimum, spec.maximum
    if hi == lo:
        return lo
    return lo + (hi - lo) * float(scaled) / NORMALIZED_MAX


@dataclass
class MetadataRecord:
    """Raw attribute values for one image plus presence flags.

    ``values[name]`` is meaningful only where ``present[name]`` is True.
    Missing attributes stay out of ``values`` entirely.
    """

    values: dict[str, float] = field(default_factory=dict)
    present: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in self.values:
            if name not in ATTRIBUTE_ORDER:
                raise ValueError(f"unknown attribute {name!r}")
        # A supplied value implies presence unless the flag says otherwise.
        full = {name: name in self.values for name in ATTRIBUTE_ORDER}
        for name, flag in self.present.items():
            if name not in full:
                raise ValueError(f"unknown attribute {name!r}")
            full[name] = bool(flag)
        for name, flag in full.items():
            if flag and name not in self.values:
                raise ValueError(f"attribute {name!r} marked present but has no value")
        self.present = full
        self._validate()

    def _validate(self) -> None:
        v = self.values
        if self.present["month"] and not (1 <= v["month"] <= 12):
            raise ValueError(f"month {v['month']} outside [1, 12]")
        if self.present["day"] and not (1 <= v["day"] <= 31):
            raise ValueError(f"day {v['day']} outside [1, 31]")
        if self.present["latitude"] and not (-90.0 <= v["latitude"] <= 90.0):
            raise ValueError(f"latitude {v['latitude']} outside [-90, 90]")
        if self.present["longitude"] and not (-180.0 <= v["longitude"] < 180.0):
            raise ValueError(f"longitude {v['longitude']} outside [-180, 180)")
        if self.present["tcc"] and not (0.0 <= v["tcc"] <= 1.0):
            raise ValueError(f"tcc {v['tcc']} outside [0, 1]")
        if self.present["gsd"] and v["gsd"] <= 0.0:
            raise ValueError(f"gsd {v['gsd']} must be positive")

    @classmethod
    def complete(cls, values: dict[str, float]) -> "MetadataRecord":
        """Record with all 13 attributes present; raises if any is missing."""
        missing = [n for n in ATTRIBUTE_ORDER if n not in values]
        if missing:
            raise ValueError(f"missing attributes: {missing}")
        return cls(values=dict(values))

    def normalized(
        self, specs: list[AttributeSpec], counter: ClampCounter | None = None
    ) -> tuple[list[float], list[bool]]:
        """Normalized values and presence mask in canonical order.

        Absent slots carry 0.0; downstream consumers must honor the mask.
        """
        vals = []
        mask = []
        for spec in specs:
            if self.present[spec.name]:
                vals.append(normalize(self.values[spec.name], spec, counter))
                mask.append(True)
            else:
                vals.append(0.0)
                mask.append(False)
        return vals, mask
