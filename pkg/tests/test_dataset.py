import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yieldcast.dataset import (
    SOIL_HEADER, WEATHER_HEADER, YIELD_HEADER, Sample, SynthConfig, assemble, ingest_yields,
    load_dataset, read_soil, read_weather, save_dataset, split_by_year, synthesize,
    synthetic_yield, window_drivers,
)
from yieldcast.errors import AssemblyError, DomainError, SchemaError, WindowError
from yieldcast.features import fit_scaler


def write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def yields_file(tmp_path, rows):
    return write(tmp_path / "y.csv", YIELD_HEADER, rows)


def test_ingest_drops_zero_yields(tmp_path):
    path = yields_file(tmp_path, [["M1", "SP", 2017, "corn", 5000, -22, -48],
                                  ["M1", "SP", 2018, "corn", 0, -22, -48],
                                  ["M2", "SP", 2018, "Corn", 4000.5, -22, -48]])
    recs = ingest_yields(path)
    assert [r.key for r in recs] == [("M1", 2017, "corn"), ("M2", 2018, "corn")]
    assert recs.removed_zero == 1


@pytest.mark.parametrize("row, field", [
    (["M1", "SP", "20x8", "corn", 1, 0, 0], "year"),
    (["M1", "SP", 2018, "wheat", 1, 0, 0], "crop"),
    (["M1", "SP", 2018, "corn", "nan", 0, 0], "yield_kg_ha"),
    (["", "SP", 2018, "corn", 1, 0, 0], "municipality_id"),
])
def test_ingest_reports_line_and_field(tmp_path, row, field):
    path = yields_file(tmp_path, [["M0", "SP", 2018, "corn", 1, 0, 0], row])
    with pytest.raises(SchemaError) as info:
        ingest_yields(path)
    assert info.value.line == 3 and info.value.field == field


def test_ingest_rejects_negative_duplicate_and_bad_header(tmp_path):
    with pytest.raises(DomainError):
        ingest_yields(yields_file(tmp_path, [["M1", "SP", 2018, "corn", -1, 0, 0]]))
    row = ["M1", "SP", 2018, "corn", 1, 0, 0]
    with pytest.raises(SchemaError):
        ingest_yields(yields_file(tmp_path, [row, row]))
    with pytest.raises(SchemaError):
        ingest_yields(write(tmp_path / "h.csv", YIELD_HEADER[::-1], [row]))
    with pytest.raises(SchemaError):
        ingest_yields(yields_file(tmp_path, [row[:-1]]))


def test_empty_yield_only_for_prediction(tmp_path):
    path = yields_file(tmp_path, [["M1", "SP", 2018, "corn", "", 0, 0]])
    with pytest.raises(SchemaError):
        ingest_yields(path)
    assert ingest_yields(path, require_yield=False)[0].yield_kg_ha is None


def test_weather_and_soil_readers(tmp_path):
    w = write(tmp_path / "w.csv", WEATHER_HEADER, [["M1", 2018, 1, 30, 20, 10]])
    assert read_weather(w)["M1"][(2018, 1)].precip == 10
    bad = write(tmp_path / "w2.csv", WEATHER_HEADER, [["M1", 2018, 13, 30, 20, 10]])
    with pytest.raises(SchemaError):
        read_weather(bad)
    flipped = write(tmp_path / "w3.csv", WEATHER_HEADER, [["M1", 2018, 1, 10, 20, 10]])
    with pytest.raises(DomainError):
        read_weather(flipped)
    s = write(tmp_path / "s.csv", SOIL_HEADER, [["M1", -10, -50, *range(63)]])
    lat, lon, profile = read_soil(s)["M1"]
    assert (lat, lon, profile.values[8, 6]) == (-10, -50, 62)


def _mini_inputs(tmp_path, years=(2018,), state="SP", crop="cotton"):
    rows = [["M1", state, y, crop, 3000 + y, -22, -48] for y in years]
    weather = [["M1", y, m, 30, 20, 100] for y in (min(years) - 1, min(years))
               for m in range(1, 13)]
    return (yields_file(tmp_path, rows), write(tmp_path / "w.csv", WEATHER_HEADER, weather),
            write(tmp_path / "s.csv", SOIL_HEADER, [["M1", -22, -48, *([10] * 63)]]))


def test_window_ends_in_record_year(tmp_path, calendar, monkeypatch):
    y, w, s = _mini_inputs(tmp_path)
    weather = read_weather(w)
    # mark each month with its precip so the window can be read back
    for (yr, m), mw in list(weather["M1"].items()):
        weather["M1"][(yr, m)] = type(mw)(yr, m, 30, 20, yr * 100 + m)
    sample = assemble(ingest_yields(y), weather, s, calendar)[0]
    months = sample.dynamic[:, 2].astype(int).tolist()
    assert months == [201709, 201710, 201711, 201712, 201801, 201802, 201803, 201804, 201805]
    assert sample.static.shape == (65,) and sample.target == 5018


def test_assemble_drops_and_counts_missing(tmp_path, calendar):
    y, w, s = _mini_inputs(tmp_path, years=(2018, 2019))
    out = assemble(ingest_yields(y), w, s, calendar, max_missing_fraction=0.5)
    assert len(out) == 1 and out.dropped == 1
    with pytest.raises(AssemblyError):
        assemble(ingest_yields(y), w, s, calendar, max_missing_fraction=0.2)
    with pytest.raises(WindowError):
        assemble(ingest_yields(y), w, s, calendar, on_missing="raise")


def _samples(n_years=4, per_year=10):
    rng = np.random.default_rng(0)
    return [Sample((f"M{i}", 2015 + k, "corn"), rng.uniform(size=(9, 4)), rng.uniform(size=65),
                   float(rng.uniform(1000, 5000)))
            for k in range(n_years) for i in range(per_year)]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0.0, 0.5), test_year=st.integers(2014, 2019))
def test_split_is_a_partition(seed, frac, test_year):
    samples = _samples()
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        split = split_by_year(samples, test_year, frac, seed)
    keys = [s.key for part in (split.train, split.validation, split.test) for s in part]
    assert sorted(keys) == sorted(s.key for s in samples)
    assert all(s.year == test_year for s in split.test)
    assert all(s.year != test_year for s in split.train + split.validation)
    assert len(split.validation) == round(frac * (len(samples) - len(split.test)))


def test_split_is_seeded_and_scaler_uses_train_only():
    samples = _samples()
    a = split_by_year(samples, 2018, 0.2, seed=4)
    b = split_by_year(list(reversed(samples)), 2018, 0.2, seed=4)
    assert [s.key for s in a.validation] == [s.key for s in b.validation]
    assert a.scaler.to_dict() == fit_scaler(a.train).to_dict()
    d, s, t = a.arrays("train")
    assert d.min() == 0 and d.max() == 1 and t.min() == 0 and t.max() == 1


def test_empty_test_year_warns():
    with pytest.warns(UserWarning):
        split = split_by_year(_samples(), 2030)
    assert split.test == []


def test_dataset_bundle_round_trip(tmp_path):
    split = split_by_year(_samples(), 2018, 0.2, 1)
    save_dataset(split, tmp_path / "bundle")
    again = load_dataset(tmp_path / "bundle")
    for name in ("train", "validation", "test"):
        assert again.keys(name) == split.keys(name)
        for x, y in zip(again.arrays(name), split.arrays(name)):
            assert np.array_equal(x, y)
    manifest = json.loads((tmp_path / "bundle" / "manifest.json").read_text())
    assert manifest["counts"] == {"train": 24, "validation": 6, "test": 10}


def test_synthesize_is_deterministic_and_documented(tmp_path, calendar):
    cfg = SynthConfig(n_municipalities=6, start_year=2016, end_year=2018, noise_std=0.0,
                      zero_fraction=0.0)
    a = synthesize(cfg, seed=9, out_dir=tmp_path / "a")
    b = synthesize(cfg, seed=9, out_dir=tmp_path / "b")
    for name in ("yields", "weather", "soil", "coefficients"):
        assert a.paths[name].read_bytes() == b.paths[name].read_bytes()
    coef = json.loads(a.paths["coefficients"].read_text())
    samples = assemble(ingest_yields(a.paths["yields"]), a.paths["weather"], a.paths["soil"],
                       calendar)
    assert len(samples) == 18
    drivers = np.array([window_drivers(s.dynamic, s.static) for s in samples])
    expected = synthetic_yield(drivers, coef)
    assert np.array([s.target for s in samples]) == pytest.approx(expected, rel=1e-6)


def test_synthesize_zero_fraction(tmp_path):
    res = synthesize(SynthConfig(n_municipalities=40, zero_fraction=0.25), seed=1)
    zeros = sum(r.yield_kg_ha == 0 for r in res.records)
    assert 0.15 < zeros / len(res.records) < 0.35
    with pytest.raises(DomainError):
        SynthConfig(zero_fraction=1.0)
