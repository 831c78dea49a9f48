"""Yield-record ingestion, sample assembly, year-based split and synthetic data.

A yield record for year ``Y`` is paired with the feature window whose last
month falls in ``Y``; wrap-around windows therefore start in ``Y - 1``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .calendars import STATES, CalendarTable, CropKind, load_calendar, window_years
from .errors import AssemblyError, DomainError, SchemaError, WindowError
from .features import (
    DYNAMIC_COLUMNS, SOIL_COLUMNS, SOIL_LAYERS, SOIL_PROPERTIES, STATIC_COLUMNS, GddConfig,
    MonthlyWeather, Scaler, SoilProfile, build_dynamic, build_static, fit_scaler,
)

log = logging.getLogger(__name__)

YIELD_HEADER = ["municipality_id", "state", "year", "crop", "yield_kg_ha", "lat", "lon"]
WEATHER_HEADER = ["municipality_id", "year", "month", "tmax", "tmin", "precip"]
SOIL_HEADER = ["municipality_id", "lat", "lon", *SOIL_COLUMNS]
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class YieldRecord:
    municipality_id: str
    state: str
    year: int
    crop: CropKind
    yield_kg_ha: Optional[float]
    lat: float
    lon: float

    @property
    def key(self):
        return (self.municipality_id, self.year, self.crop.value)


class YieldRecords(list):
    """List of records that remembers how many zero-yield rows were removed."""

    removed_zero = 0


@dataclass
class Sample:
    key: tuple  # (municipality_id, year, crop)
    dynamic: np.ndarray  # (n, 4)
    static: np.ndarray  # (65,)
    target: float
    state: str = ""

    @property
    def year(self) -> int:
        return self.key[1]


def _open_rows(path, header, name):
    """Yield ``(line_number, row)`` from a CSV file after checking its header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return
        if [h.strip() for h in first] != header:
            raise SchemaError(f"{name}: header must be {','.join(header)}", line=1)
        for row in reader:
            if not row or not any(v.strip() for v in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{name}: expected {len(header)} fields, got {len(row)}",
                                  line=reader.line_num)
            yield reader.line_num, [v.strip() for v in row]


def _num(value, line, fieldname, kind=float):
    try:
        out = kind(value)
    except ValueError:
        raise SchemaError(f"cannot parse {value!r}", line=line, field=fieldname) from None
    if kind is float and not math.isfinite(out):
        raise SchemaError(f"non-finite value {value!r}", line=line, field=fieldname)
    return out


def ingest_yields(path, require_yield: bool = True) -> YieldRecords:
    """Read a yield file, dropping zero-yield rows.

    With ``require_yield=False`` an empty yield cell is allowed (prediction
    inputs) and kept as ``None``.
    """
    out = YieldRecords()
    seen = set()
    for line, row in _open_rows(path, YIELD_HEADER, str(path)):
        mid, state, year, crop, yld, lat, lon = row
        if not mid:
            raise SchemaError("empty municipality_id", line=line, field="municipality_id")
        if not state:
            raise SchemaError("empty state", line=line, field="state")
        try:
            crop = CropKind.parse(crop)
        except SchemaError:
            raise SchemaError(f"unknown crop {crop!r}", line=line, field="crop") from None
        if yld == "" and not require_yield:
            value = None
        else:
            value = _num(yld, line, "yield_kg_ha")
            if value < 0:
                raise DomainError(f"negative yield {value} on line {line}")
        rec = YieldRecord(mid, state, _num(year, line, "year", int), crop, value,
                          _num(lat, line, "lat"), _num(lon, line, "lon"))
        if rec.key in seen:
            raise SchemaError(f"duplicate record {rec.key}", line=line)
        seen.add(rec.key)
        if value == 0:
            out.removed_zero += 1
            continue
        out.append(rec)
    log.info("%s: %d records, %d removed with zero yield", path, len(out), out.removed_zero)
    return out


def read_weather(path) -> dict:
    """``{municipality_id: {(year, month): MonthlyWeather}}``."""
    out: dict = {}
    for line, row in _open_rows(path, WEATHER_HEADER, str(path)):
        mid = row[0]
        year, month = _num(row[1], line, "year", int), _num(row[2], line, "month", int)
        if not 1 <= month <= 12:
            raise SchemaError(f"month {month} out of range", line=line, field="month")
        tmax, tmin, precip = (_num(v, line, f) for v, f in zip(row[3:], WEATHER_HEADER[3:]))
        try:
            w = MonthlyWeather(year, month, tmax, tmin, precip)
        except DomainError as exc:
            raise DomainError(f"{path} line {line}: {exc}") from None
        out.setdefault(mid, {})[(year, month)] = w
    return out


def read_soil(path) -> dict:
    """``{municipality_id: (lat, lon, SoilProfile)}``."""
    out = {}
    for line, row in _open_rows(path, SOIL_HEADER, str(path)):
        mid = row[0]
        values = [_num(v, line, f) for v, f in zip(row[1:], SOIL_HEADER[1:])]
        try:
            profile = SoilProfile.from_flat(values[2:])
        except SchemaError as exc:
            raise SchemaError(f"{path}: {exc}", line=line) from None
        out[mid] = (values[0], values[1], profile)
    return out


class AssembledSamples(list):
    dropped = 0


def assemble(records: Iterable[YieldRecord], weather, soil, calendar: CalendarTable,
             gdd: Optional[GddConfig] = None, anchor: str = "planting-start",
             max_missing_fraction: float = 0.05, allow_missing_target: bool = False,
             on_missing: str = "drop") -> AssembledSamples:
    """Build one Sample per record; drop (and count) records lacking data.

    ``weather`` and ``soil`` are paths or the mappings returned by
    :func:`read_weather` / :func:`read_soil`. Raises :class:`AssemblyError`
    when the dropped fraction exceeds ``max_missing_fraction``. With
    ``on_missing="raise"`` the first incomplete record raises
    :class:`WindowError` instead.
    """
    if on_missing not in ("drop", "raise"):
        raise ValueError("on_missing must be 'drop' or 'raise'")
    gdd = gdd or GddConfig()
    if not isinstance(weather, dict):
        weather = read_weather(weather)
    if not isinstance(soil, dict):
        soil = read_soil(soil)
    records = list(records)
    out = AssembledSamples()
    for rec in records:
        if rec.yield_kg_ha is None and not allow_missing_target:
            raise SchemaError(f"record {rec.key} has no yield")
        window = window_years(calendar.feature_window(rec.state, rec.crop, anchor), rec.year)
        series = weather.get(rec.municipality_id, {})
        months = [series.get(ym) for ym in window]
        if any(m is None for m in months) or rec.municipality_id not in soil:
            if on_missing == "raise":
                gaps = [f"{y}-{mo:02d}" for (y, mo), m in zip(window, months) if m is None]
                raise WindowError(f"record {rec.key}: missing "
                                  + (f"weather for {', '.join(gaps)}" if gaps else "soil profile"))
            out.dropped += 1
            continue
        _, _, profile = soil[rec.municipality_id]
        out.append(Sample(
            key=rec.key,
            dynamic=build_dynamic(months, rec.crop, gdd, calendar),
            static=build_static(profile, rec.lat, rec.lon),
            target=math.nan if rec.yield_kg_ha is None else float(rec.yield_kg_ha),
            state=rec.state,
        ))
    if records:
        frac = out.dropped / len(records)
        if out.dropped:
            log.warning("assembly dropped %d of %d records for missing weather/soil",
                        out.dropped, len(records))
        if frac > max_missing_fraction:
            raise AssemblyError(f"{out.dropped} of {len(records)} records lack weather/soil data "
                                f"({frac:.1%} > {max_missing_fraction:.1%})")
    return out


@dataclass
class SplitDataset:
    train: list
    validation: list
    test: list
    scaler: Optional[Scaler]
    seed: int = 0
    test_year: int = 2018
    validation_fraction: float = 0.1

    def part(self, name: str) -> list:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def arrays(self, name: str, normalized: bool = True):
        """``(dynamic, static, target)`` arrays for one split."""
        samples = self.part(name)
        if not samples:
            return np.empty((0, 0, 4)), np.empty((0, len(STATIC_COLUMNS))), np.empty(0)
        dyn = np.stack([s.dynamic for s in samples])
        stat = np.stack([s.static for s in samples])
        y = np.array([s.target for s in samples])
        if normalized:
            dyn = self.scaler.transform_dynamic(dyn)
            stat = self.scaler.transform_static(stat)
            y = self.scaler.transform_target(y)
        return dyn, stat, y

    def keys(self, name: str) -> list:
        return [s.key for s in self.part(name)]


def split_by_year(samples: Sequence[Sample], test_year: int = 2018,
                  validation_fraction: float = 0.1, seed: int = 0) -> SplitDataset:
    """Hold out ``test_year``; split the rest randomly into train/validation."""
    if not samples:
        raise ValueError("split_by_year needs at least one sample")
    if not 0 <= validation_fraction < 1:
        raise ValueError("validation_fraction must lie in [0, 1)")
    ordered = sorted(samples, key=lambda s: s.key)
    test = [s for s in ordered if s.year == test_year]
    rest = [s for s in ordered if s.year != test_year]
    if not test:
        warnings.warn(f"no samples for test year {test_year}; test set is empty", stacklevel=2)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(rest))
    n_val = int(round(validation_fraction * len(rest)))
    val_idx = set(perm[:n_val].tolist())
    validation = [s for i, s in enumerate(rest) if i in val_idx]
    train = [s for i, s in enumerate(rest) if i not in val_idx]
    scaler = fit_scaler(train) if train else None
    return SplitDataset(train, validation, test, scaler, seed, test_year, validation_fraction)


# -- persisted bundle --------------------------------------------------------

def _bundle_header(n: int) -> list:
    dyn = [f"{col}_m{t}" for t in range(n) for col in DYNAMIC_COLUMNS]
    return ["split", "municipality_id", "state", "year", "crop", "target_kg_ha", *dyn,
            *STATIC_COLUMNS]


def save_dataset(split: SplitDataset, directory) -> Path:
    """Write ``samples.csv`` plus ``manifest.json`` (schema, scaler, counts, seed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    all_samples = split.train + split.validation + split.test
    n = all_samples[0].dynamic.shape[0] if all_samples else 0
    with (directory / "samples.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_bundle_header(n))
        for name in ("train", "validation", "test"):
            for s in split.part(name):
                writer.writerow([name, s.key[0], s.state, s.key[1], s.key[2], repr(float(s.target)),
                                 *map(repr, s.dynamic.ravel().tolist()),
                                 *map(repr, s.static.tolist())])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "window_months": n,
        "counts": {k: len(split.part(k)) for k in ("train", "validation", "test")},
        "seed": split.seed,
        "test_year": split.test_year,
        "validation_fraction": split.validation_fraction,
        "scaler": split.scaler.to_dict() if split.scaler else None,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    return directory


def load_dataset(directory) -> SplitDataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported dataset schema {manifest.get('schema_version')}")
    n = manifest["window_months"]
    parts = {"train": [], "validation": [], "test": []}
    for _, row in _open_rows(directory / "samples.csv", _bundle_header(n), "samples.csv"):
        nums = [float(v) for v in row[5:]]
        dyn = np.array(nums[1:1 + 4 * n]).reshape(n, 4)
        parts[row[0]].append(Sample((row[1], int(row[3]), row[4]), dyn,
                                    np.array(nums[1 + 4 * n:]), nums[0], row[2]))
    scaler = Scaler.from_dict(manifest["scaler"]) if manifest["scaler"] else None
    return SplitDataset(parts["train"], parts["validation"], parts["test"], scaler,
                        manifest["seed"], manifest["test_year"], manifest["validation_fraction"])


# -- synthetic data ----------------------------------------------------------

# Approximate state centroids (lat, lon), degrees.
STATE_CENTROIDS = {
    "AC": (-9.0, -70.5), "AL": (-9.6, -36.6), "AM": (-4.0, -64.5), "AP": (1.4, -51.8),
    "BA": (-12.5, -41.7), "CE": (-5.3, -39.3), "DF": (-15.8, -47.8), "ES": (-19.6, -40.7),
    "GO": (-15.9, -49.8), "MA": (-5.4, -45.3), "MG": (-18.5, -44.6), "MS": (-20.5, -54.8),
    "MT": (-12.9, -55.9), "PA": (-3.8, -52.5), "PB": (-7.1, -36.8), "PE": (-8.3, -37.9),
    "PI": (-7.4, -42.7), "PR": (-24.6, -51.5), "RJ": (-22.2, -42.6), "RN": (-5.8, -36.5),
    "RO": (-10.9, -62.8), "RR": (2.1, -61.4), "RS": (-29.7, -53.2), "SC": (-27.2, -50.4),
    "SE": (-10.6, -37.4), "SP": (-22.2, -48.7), "TO": (-10.2, -48.3),
}

BASE_YIELD = {
    CropKind.CORN: 5000.0,
    CropKind.COTTON: 3800.0,
    CropKind.RICE: 5500.0,
    CropKind.SOYBEAN: 3000.0,
    CropKind.SUGARCANE: 70000.0,
}

# Weights of the synthetic yield rule; see ``synthetic_yield``.
SYNTH_WEIGHTS = {
    "gdd": 0.12,
    "precip": 0.05,
    "tmax": -0.03,
    "clay": 0.15,
    "soc": 0.12,
    "ph": -0.10,
}
SYNTH_DRIVERS = ("gdd", "precip", "tmax", "clay", "soc", "ph")


@dataclass(frozen=True)
class SynthConfig:
    n_municipalities: int = 300
    start_year: int = 2011
    end_year: int = 2018
    crop: CropKind = CropKind.CORN
    noise_std: float = 0.02
    zero_fraction: float = 0.02
    base_yield: Optional[float] = None
    states: Optional[tuple] = None
    anchor: str = "planting-start"

    def __post_init__(self):
        object.__setattr__(self, "crop", CropKind.parse(self.crop))
        if self.n_municipalities < 1:
            raise DomainError("n_municipalities must be >= 1")
        if self.end_year < self.start_year:
            raise DomainError("end_year precedes start_year")
        if not 0 <= self.zero_fraction < 1:
            raise DomainError("zero_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {"n_municipalities": self.n_municipalities, "start_year": self.start_year,
                "end_year": self.end_year, "crop": self.crop.value, "noise_std": self.noise_std,
                "zero_fraction": self.zero_fraction, "base_yield": self.base_yield,
                "states": list(self.states) if self.states else None, "anchor": self.anchor}


@dataclass
class SynthResult:
    records: list
    paths: dict = field(default_factory=dict)
    coefficients: dict = field(default_factory=dict)


def window_drivers(dynamic: np.ndarray, static: np.ndarray) -> np.ndarray:
    """Drivers of the synthetic rule for one sample.

    Returns ``[final accumulated GDD, total precip, mean tmax, clay_L1,
    soc_L1, phh2o_L1]``.
    """
    return np.array([
        dynamic[-1, 3], dynamic[:, 2].sum(), dynamic[:, 0].mean(),
        static[STATIC_COLUMNS.index("clay_L1")],
        static[STATIC_COLUMNS.index("soc_L1")],
        static[STATIC_COLUMNS.index("phh2o_L1")],
    ])


def synthetic_yield(drivers: np.ndarray, coefficients: dict) -> np.ndarray:
    """Noise-free synthetic yield (kg/ha) for rows of :func:`window_drivers`.

    Linear in the standardized drivers ``z = (driver - center) / scale``::

        yield = base_yield * (1 + sum_k weight_k * z_k)
    """
    drivers = np.atleast_2d(drivers)
    z = (drivers - np.asarray(coefficients["center"])) / np.asarray(coefficients["scale"])
    w = np.array([coefficients["weights"][k] for k in SYNTH_DRIVERS])
    return coefficients["base_yield"] * (1.0 + z @ w)


def _synth_soil(rng) -> np.ndarray:
    props = np.empty((len(SOIL_PROPERTIES), SOIL_LAYERS))
    depth = np.arange(SOIL_LAYERS)
    clay = np.clip(rng.uniform(10, 60) + 2.0 * depth + rng.normal(0, 1.5, SOIL_LAYERS), 1, 80)
    silt = np.clip(rng.uniform(8, 30) + rng.normal(0, 1.0, SOIL_LAYERS), 1, 40)
    props[0] = clay
    props[1] = silt
    props[2] = np.clip(100.0 - clay - silt, 0, 100)
    props[3] = rng.uniform(1.1, 1.6) + 0.03 * depth
    props[4] = np.clip(rng.uniform(0, 20) + rng.normal(0, 1, SOIL_LAYERS), 0, None)
    props[5] = rng.uniform(5, 30) * (1 - 0.05 * depth)
    props[6] = rng.uniform(3, 40) * np.exp(-0.35 * depth)
    ph = rng.uniform(4.5, 7.5)
    props[7] = ph + 0.05 * depth
    props[8] = ph - 0.8 + 0.05 * depth
    return np.round(props, 3)


def synthesize(config: SynthConfig = SynthConfig(), seed: int = 0, out_dir=None,
               calendar: Optional[CalendarTable] = None,
               gdd: Optional[GddConfig] = None) -> SynthResult:
    """Generate a municipality panel whose yields follow :func:`synthetic_yield`.

    Climate varies smoothly with latitude (warmer and less seasonal toward
    the equator) plus per-year and per-month anomalies. The rule's
    centering/scale constants are the mean/std of each driver over the
    generated records and are saved with the weights in
    ``coefficients.json``.
    """
    calendar = calendar or load_calendar()
    gdd = gdd or GddConfig()
    rng = np.random.default_rng(seed)
    crop = config.crop
    states = tuple(config.states) if config.states else STATES
    years = list(range(config.start_year - 1, config.end_year + 1))
    phase = np.cos(2 * np.pi * np.arange(12) / 12.0)

    munis, weather_rows, soil_rows = [], [], []
    weather: dict = {}
    soil: dict = {}
    for m in range(config.n_municipalities):
        mid = f"M{m:05d}"
        state = states[int(rng.integers(len(states)))]
        clat, clon = STATE_CENTROIDS[state]
        lat = round(float(np.clip(clat + rng.normal(0, 1.0), -33.7, 5.2)), 4)
        lon = round(float(np.clip(clon + rng.normal(0, 1.0), -73.9, -34.8)), 4)
        t_mean = 26.5 + 0.25 * lat + rng.normal(0, 0.8)
        amp = 0.5 + 0.13 * abs(lat)
        dtr = rng.uniform(7, 12)
        p_mean = 40 + 160 * rng.beta(2, 2)
        series = {}
        for year in years:
            t_anom = rng.normal(0, 1.0)
            p_anom = rng.lognormal(0, 0.25)
            t = t_mean + amp * phase + t_anom + rng.normal(0, 0.3, 12)
            p = p_mean * (1 + 0.3 * phase) * p_anom * rng.gamma(25, 1 / 25, 12)
            for k in range(12):
                tmax = round(float(t[k] + dtr / 2), 3)
                tmin = round(float(t[k] - dtr / 2), 3)
                prec = round(float(p[k]), 3)
                series[(year, k + 1)] = MonthlyWeather(year, k + 1, tmax, tmin, prec)
                weather_rows.append([mid, year, k + 1, tmax, tmin, prec])
        weather[mid] = series
        profile = SoilProfile(_synth_soil(rng))
        soil[mid] = (lat, lon, profile)
        soil_rows.append([mid, lat, lon, *profile.flat().tolist()])
        munis.append((mid, state, lat, lon))

    keys, drivers = [], []
    for mid, state, lat, lon in munis:
        for year in range(config.start_year, config.end_year + 1):
            window = window_years(calendar.feature_window(state, crop, config.anchor), year)
            dyn = build_dynamic([weather[mid][ym] for ym in window], crop, gdd, calendar)
            drivers.append(window_drivers(dyn, build_static(soil[mid][2], lat, lon)))
            keys.append((mid, state, year, lat, lon))
    drivers = np.array(drivers)
    base = config.base_yield or BASE_YIELD[crop]
    coefficients = {
        "base_yield": base,
        "center": drivers.mean(axis=0).tolist(),
        "scale": np.where(drivers.std(axis=0) > 0, drivers.std(axis=0), 1.0).tolist(),
        "weights": dict(SYNTH_WEIGHTS),
        "drivers": ["gdd_acc_final", "precip_total", "tmax_mean", "clay_L1", "soc_L1", "phh2o_L1"],
        "noise_std": config.noise_std,
        "seed": seed,
        "config": config.to_dict(),
    }
    clean = synthetic_yield(drivers, coefficients)
    noisy = clean * (1.0 + config.noise_std * rng.normal(size=clean.size))
    noisy = np.maximum(noisy, 0.1 * base)
    zero = rng.random(clean.size) < config.zero_fraction
    noisy[zero] = 0.0

    records = [YieldRecord(mid, state, year, crop, round(float(y), 3), lat, lon)
               for (mid, state, year, lat, lon), y in zip(keys, noisy)]
    result = SynthResult(records, coefficients=coefficients)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.paths = {
            "yields": _write_csv(out_dir / "yields.csv", YIELD_HEADER,
                                 ([r.municipality_id, r.state, r.year, r.crop.value,
                                   repr(r.yield_kg_ha), repr(r.lat), repr(r.lon)] for r in records)),
            "weather": _write_csv(out_dir / "weather.csv", WEATHER_HEADER,
                                  ([mid, y, mo, repr(a), repr(b), repr(c)]
                                   for mid, y, mo, a, b, c in weather_rows)),
            "soil": _write_csv(out_dir / "soil.csv", SOIL_HEADER,
                               ([r[0], *map(repr, r[1:])] for r in soil_rows)),
        }
        coef_path = out_dir / "coefficients.json"
        coef_path.write_text(json.dumps(coefficients, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
        result.paths["coefficients"] = coef_path
    return result


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path
