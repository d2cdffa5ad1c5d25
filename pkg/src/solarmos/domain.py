"""Core data types shared across the package.

Bulk case data travels through the pipeline as pandas frames; the
dataclasses here describe single records and carry the validation rules.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np


class StructuralError(ValueError):
    """Raised when an input has the wrong shape or names."""


class ValidationError(ValueError):
    """Raised when a record violates a domain constraint."""


DEFAULT_LEVELS = tuple(round(0.02 * k, 2) for k in range(1, 50))


@dataclass(frozen=True)
class QuantileLevels:
    levels: tuple = DEFAULT_LEVELS

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or lv.size == 0:
            raise ValidationError("quantile levels must be a non-empty sequence")
        if np.any(lv <= 0.0) or np.any(lv >= 1.0):
            raise ValidationError("quantile levels must lie in the open interval (0, 1)")
        if np.any(np.diff(lv) <= 0.0):
            raise ValidationError("quantile levels must be strictly increasing")
        object.__setattr__(self, "levels", tuple(float(x) for x in lv))

    def __len__(self):
        return len(self.levels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)

    def median_index(self) -> int:
        lv = self.as_array()
        idx = np.flatnonzero(np.isclose(lv, 0.5, rtol=0.0, atol=1e-12))
        if idx.size == 0:
            raise StructuralError("quantile grid has no 0.5 level")
        return int(idx[0])


@dataclass(frozen=True)
class QuantileForecast:
    """A case's predictive distribution of clear-sky index."""

    values: tuple
    levels: QuantileLevels = field(default_factory=QuantileLevels)

    def __post_init__(self):
        if len(self.values) != len(self.levels):
            raise StructuralError(
                f"forecast has {len(self.values)} values for {len(self.levels)} levels"
            )
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def median(self) -> float:
        return self.values[self.levels.median_index()]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def sanitize_array(raw: np.ndarray) -> np.ndarray:
    """Sort each row ascending, then clamp at zero.

    Works on a single vector or on a ``(n_cases, Q)`` matrix.
    """
    out = np.sort(np.asarray(raw, dtype=float), axis=-1)
    return np.maximum(out, 0.0)


def sanitize_quantiles(raw: Sequence[float], levels: QuantileLevels | None = None) -> QuantileForecast:
    levels = levels or QuantileLevels()
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size != len(levels):
        raise StructuralError(
            f"expected {len(levels)} quantile values, got shape {raw.shape}"
        )
    return QuantileForecast(tuple(sanitize_array(raw)), levels)


class Season(enum.Enum):
    WINTER = "Winter"
    SPRING = "Spring"
    SUMMER = "Summer"
    AUTUMN = "Autumn"

    @property
    def months(self) -> tuple:
        return _SEASON_MONTHS[self]


_SEASON_MONTHS = {
    Season.WINTER: (12, 1, 2),
    Season.SPRING: (3, 4, 5),
    Season.SUMMER: (6, 7, 8),
    Season.AUTUMN: (9, 10, 11),
}
_MONTH_TO_SEASON = {m: s for s, ms in _SEASON_MONTHS.items() for m in ms}


def season_of(timestamp) -> Season:
    return _MONTH_TO_SEASON[timestamp.month]


def season_of_month(month: int) -> Season:
    return _MONTH_TO_SEASON[int(month)]


@dataclass(frozen=True)
class StationMeta:
    station_id: str
    latitude: float
    longitude: float
    dist_coast_km: float = 0.0
    dist_water_km: float = 0.0
    dist_inland_km: float = 0.0
    elevation_m: float = 0.0

    def __post_init__(self):
        if not self.station_id:
            raise ValidationError("station_id is required")
        if not -90.0 <= self.latitude <= 90.0:
            raise ValidationError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValidationError(f"longitude {self.longitude} outside [-180, 180]")
        for name in ("dist_coast_km", "dist_water_km", "dist_inland_km"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ForecastCase:
    station_id: str
    valid_time: datetime
    lead_time: int
    predictors: Mapping[str, float]
    clearsky_wm2: float
    observation: Optional[float] = None

    def __post_init__(self):
        from .features import PREDICTOR_NAMES

        unknown = set(self.predictors) - set(PREDICTOR_NAMES)
        if unknown:
            raise StructuralError(f"unknown predictors: {sorted(unknown)}")
        if self.observation is not None and self.observation < 0:
            raise ValidationError(f"negative observation {self.observation}")
        if self.clearsky_wm2 < 0:
            raise ValidationError("clearsky_wm2 must be non-negative")
        object.__setattr__(self, "predictors", MappingProxyType(dict(self.predictors)))

    @property
    def complete(self) -> bool:
        return all(np.isfinite(v) for v in self.predictors.values())
