"""Dynamic and static model inputs.

Dynamic input: one row per window month with columns
``(tmax, tmin, precip, accumulated_gdd)``.
Static input: 63 soil values (9 properties x 7 depth layers) followed by
latitude and longitude of the municipality centroid.
"""

from __future__ import annotations

import calendar as _stdcal
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .calendars import DEFAULT_CYCLE_LENGTHS, CalendarTable, CropKind
from .errors import ContinuityError, DomainError, FitError, SchemaError, WindowError

DYNAMIC_COLUMNS = ("tmax", "tmin", "precip", "gdd_acc")
N_DYNAMIC = len(DYNAMIC_COLUMNS)

# SoilGrids property codes, in slot order.
SOIL_PROPERTIES = ("clay", "silt", "sand", "bdod", "cfvo", "cec", "soc", "phh2o", "phkcl")
SOIL_LAYERS = 7
TEXTURE_PROPERTIES = ("clay", "silt", "sand")
SOIL_COLUMNS = tuple(f"{p}_L{layer}" for p in SOIL_PROPERTIES
                     for layer in range(1, SOIL_LAYERS + 1))
STATIC_COLUMNS = SOIL_COLUMNS + ("lat", "lon")
N_SOIL = len(SOIL_COLUMNS)
N_STATIC = len(STATIC_COLUMNS)


def static_slot(name: str) -> int:
    return STATIC_COLUMNS.index(name)


@dataclass(frozen=True)
class MonthlyWeather:
    year: int
    month: int
    tmax: float
    tmin: float
    precip: float

    def __post_init__(self):
        if self.tmax < self.tmin:
            raise DomainError(f"tmax {self.tmax} < tmin {self.tmin} in {self.year}-{self.month:02d}")
        if self.precip < 0:
            raise DomainError(f"negative precipitation in {self.year}-{self.month:02d}")

    @property
    def days(self) -> int:
        return _stdcal.monthrange(self.year, self.month)[1]


@dataclass(frozen=True)
class GddConfig:
    """Base temperatures (degC) per crop and an optional upper cap.

    The cap, when set, clamps tmax and tmin before averaging.
    """

    base: Mapping[CropKind, float] = field(default_factory=lambda: {
        CropKind.CORN: 10.0,
        CropKind.SOYBEAN: 10.0,
        CropKind.RICE: 10.0,
        CropKind.COTTON: 15.6,
        CropKind.SUGARCANE: 18.0,
    })
    cap: Optional[float] = None

    def __post_init__(self):
        if self.cap is not None:
            for crop, b in self.base.items():
                if self.cap <= b:
                    raise DomainError(f"GDD cap {self.cap} must exceed base {b} ({crop})")

    def base_for(self, crop) -> float:
        return float(self.base[CropKind.parse(crop)])

    def to_dict(self) -> dict:
        return {"base": {CropKind.parse(k).value: float(v) for k, v in self.base.items()},
                "cap": self.cap}

    @classmethod
    def from_dict(cls, d) -> "GddConfig":
        return cls({CropKind.parse(k): float(v) for k, v in d["base"].items()}, d.get("cap"))


def monthly_gdd(w: MonthlyWeather, base: float, days_in_month: Optional[int] = None,
                cap: Optional[float] = None) -> float:
    """Degree days for one month: ``max(0, (tmax + tmin)/2 - base) * days``."""
    if w.tmax < w.tmin:
        raise DomainError(f"tmax {w.tmax} < tmin {w.tmin}")
    days = w.days if days_in_month is None else days_in_month
    if not 28 <= days <= 31:
        raise DomainError(f"days_in_month must be in [28, 31], got {days}")
    tmax, tmin = w.tmax, w.tmin
    if cap is not None:
        tmax, tmin = min(tmax, cap), min(tmin, cap)
    return max(0.0, (tmax + tmin) / 2.0 - base) * days


def accumulate_gdd(monthly: Sequence[float]) -> list[float]:
    if len(monthly) == 0:
        raise ValueError("accumulate_gdd needs at least one month")
    return [float(v) for v in np.cumsum(np.asarray(monthly, dtype=float))]


def _next_month(year, month):
    return (year + 1, 1) if month == 12 else (year, month + 1)


def build_dynamic(weather: Sequence[MonthlyWeather], crop, gdd: GddConfig,
                  table: Optional[CalendarTable] = None) -> np.ndarray:
    """Stack window weather into an ``n x 4`` matrix with accumulated GDD."""
    crop = CropKind.parse(crop)
    n = table.cycle_length(crop) if table is not None else DEFAULT_CYCLE_LENGTHS[crop]
    if len(weather) != n:
        raise WindowError(f"{crop.value} window needs {n} months, got {len(weather)}")
    for prev, cur in zip(weather, weather[1:]):
        if (cur.year, cur.month) != _next_month(prev.year, prev.month):
            raise ContinuityError(
                f"gap in weather window: {prev.year}-{prev.month:02d} -> {cur.year}-{cur.month:02d}")
    base = gdd.base_for(crop)
    acc = accumulate_gdd([monthly_gdd(w, base, cap=gdd.cap) for w in weather])
    out = np.empty((n, N_DYNAMIC))
    out[:, 0] = [w.tmax for w in weather]
    out[:, 1] = [w.tmin for w in weather]
    out[:, 2] = [w.precip for w in weather]
    out[:, 3] = acc
    return out


@dataclass(frozen=True)
class SoilProfile:
    """63 soil values indexed as ``values[property][layer]``."""

    values: np.ndarray  # shape (9, 7)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.shape != (len(SOIL_PROPERTIES), SOIL_LAYERS):
            raise SchemaError(f"soil profile must be 9x7 (63 values), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise SchemaError("soil profile has missing values")
        for prop in TEXTURE_PROPERTIES:
            row = arr[SOIL_PROPERTIES.index(prop)]
            if np.any(row < 0) or np.any(row > 100):
                raise SchemaError(f"{prop} fraction outside [0, 100]")
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_flat(cls, flat) -> "SoilProfile":
        flat = np.asarray(flat, dtype=float).ravel()
        if flat.size != N_SOIL:
            raise SchemaError(f"soil profile needs {N_SOIL} values, got {flat.size}")
        return cls(flat.reshape(len(SOIL_PROPERTIES), SOIL_LAYERS))

    @classmethod
    def from_mapping(cls, row: Mapping[str, float]) -> "SoilProfile":
        missing = [c for c in SOIL_COLUMNS if c not in row]
        if missing:
            raise SchemaError(f"soil profile missing {missing[0]}", field=missing[0])
        return cls.from_flat([row[c] for c in SOIL_COLUMNS])

    def flat(self) -> np.ndarray:
        return self.values.ravel()


def build_static(soil, lat: float, lon: float) -> np.ndarray:
    if not isinstance(soil, SoilProfile):
        soil = SoilProfile.from_flat(soil)
    return np.concatenate([soil.flat(), [float(lat), float(lon)]])


class MinMaxFeatureScaler(TransformerMixin, BaseEstimator):
    """Per-column min-max scaling to [0, 1] without clipping.

    Constant columns map to 0 regardless of input. Unlike
    :class:`sklearn.preprocessing.MinMaxScaler`, a held-out value differing
    from a constant training column still maps to 0.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def _span(self):
        span = self.data_max_ - self.data_min_
        return np.where(span > 0, span, 1.0)

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X, dtype=np.float64, ensure_all_finite=False)
        out = (X - self.data_min_) / self._span
        out[:, self.data_max_ == self.data_min_] = 0.0
        return out

    def inverse_transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X, dtype=np.float64, ensure_all_finite=False)
        return X * self._span + self.data_min_

    def state(self) -> dict:
        return {"min": self.data_min_.tolist(), "max": self.data_max_.tolist()}

    @classmethod
    def from_state(cls, state) -> "MinMaxFeatureScaler":
        s = cls()
        s.data_min_ = np.asarray(state["min"], dtype=float)
        s.data_max_ = np.asarray(state["max"], dtype=float)
        s.n_features_in_ = s.data_min_.size
        return s


@dataclass
class Scaler:
    """Min-max statistics for dynamic columns, static slots and the target."""

    dynamic: MinMaxFeatureScaler
    static: MinMaxFeatureScaler
    target: MinMaxFeatureScaler

    def transform_dynamic(self, dyn: np.ndarray) -> np.ndarray:
        dyn = np.asarray(dyn, dtype=float)
        flat = self.dynamic.transform(dyn.reshape(-1, dyn.shape[-1]))
        return flat.reshape(dyn.shape)

    def transform_static(self, static: np.ndarray) -> np.ndarray:
        static = np.asarray(static, dtype=float)
        return self.static.transform(static.reshape(-1, static.shape[-1])).reshape(static.shape)

    def transform_target(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.target.transform(y.reshape(-1, 1)).reshape(y.shape)

    def inverse_target(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.target.inverse_transform(y.reshape(-1, 1)).reshape(y.shape)

    def to_dict(self) -> dict:
        return {"dynamic": self.dynamic.state(), "static": self.static.state(),
                "target": self.target.state()}

    @classmethod
    def from_dict(cls, d) -> "Scaler":
        return cls(*(MinMaxFeatureScaler.from_state(d[k]) for k in ("dynamic", "static", "target")))


def fit_scaler_arrays(dynamic: np.ndarray, static: np.ndarray, target) -> Scaler:
    dynamic = np.asarray(dynamic, dtype=float)
    if dynamic.shape[0] == 0:
        raise FitError("cannot fit a scaler on an empty training set")
    return Scaler(
        dynamic=MinMaxFeatureScaler().fit(dynamic.reshape(-1, dynamic.shape[-1])),
        static=MinMaxFeatureScaler().fit(np.asarray(static, dtype=float)),
        target=MinMaxFeatureScaler().fit(np.asarray(target, dtype=float).reshape(-1, 1)),
    )


def fit_scaler(train) -> Scaler:
    """Fit min/max statistics on training samples only."""
    train = list(train)
    if not train:
        raise FitError("cannot fit a scaler on an empty training set")
    return fit_scaler_arrays(np.stack([s.dynamic for s in train]),
                             np.stack([s.static for s in train]),
                             np.array([s.target for s in train]))


def apply_scaler(scaler: Scaler, sample):
    """Return a copy of ``sample`` with every feature and the target scaled."""
    return replace(sample,
                   dynamic=scaler.transform_dynamic(sample.dynamic),
                   static=scaler.transform_static(sample.static),
                   target=float(scaler.transform_target(sample.target)))
