import numpy as np
import pytest

from yieldcast.calendars import load_calendar
from yieldcast.dataset import SynthConfig, assemble, ingest_yields, split_by_year, synthesize
from yieldcast.nn import NetworkArch
from yieldcast.training import TrainConfig

TINY = dict(lstm_sizes=(6, 5), static_sizes=(7,), head_sizes=(4, 1))


@pytest.fixture(scope="session")
def calendar():
    return load_calendar()


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    synthesize(SynthConfig(n_municipalities=24, start_year=2015, end_year=2018), seed=3,
               out_dir=out)
    return out


@pytest.fixture(scope="session")
def small_split(synth_dir, calendar):
    records = ingest_yields(synth_dir / "yields.csv")
    samples = assemble(records, synth_dir / "weather.csv", synth_dir / "soil.csv", calendar)
    return split_by_year(samples, test_year=2018, validation_fraction=0.2, seed=0)


@pytest.fixture
def tiny_arch():
    return NetworkArch(n=9, **TINY)


@pytest.fixture
def fast_cfg():
    return TrainConfig(max_epochs=6, patience=2, batch_size=16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = [value for rep in terminalreporter.stats.get("passed", [])
             + terminalreporter.stats.get("failed", []) + terminalreporter.stats.get("skipped", [])
             for key, value in getattr(rep, "user_properties", []) if key == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
