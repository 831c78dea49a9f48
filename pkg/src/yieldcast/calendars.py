"""Crop calendars and feature-window resolution.

A calendar maps each (state, crop) pair to planting and harvest date windows.
The dynamic model input for a crop covers a fixed number of consecutive
months (the crop's cycle length) starting from the planting window.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import CalendarLookupError, DuplicateEntryError, SchemaError


class CropKind(str, enum.Enum):
    CORN = "corn"
    COTTON = "cotton"
    RICE = "rice"
    SOYBEAN = "soybean"
    SUGARCANE = "sugarcane"

    @classmethod
    def parse(cls, value) -> "CropKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise SchemaError(f"unknown crop {value!r}") from None

    def __str__(self):
        return self.value


# Table of plant-harvest cycle lengths, in months.
DEFAULT_CYCLE_LENGTHS = {
    CropKind.CORN: 9,
    CropKind.COTTON: 9,
    CropKind.RICE: 8,
    CropKind.SOYBEAN: 9,
    CropKind.SUGARCANE: 12,
}

REGIONS = ("N", "NE", "CO", "SE", "S")

STATE_TO_REGION = {
    **dict.fromkeys(["AC", "AM", "AP", "PA", "RO", "RR", "TO"], "N"),
    **dict.fromkeys(["AL", "BA", "CE", "MA", "PB", "PE", "PI", "RN", "SE"], "NE"),
    **dict.fromkeys(["DF", "GO", "MS", "MT"], "CO"),
    **dict.fromkeys(["ES", "MG", "RJ", "SP"], "SE"),
    **dict.fromkeys(["PR", "RS", "SC"], "S"),
}

STATES = tuple(sorted(STATE_TO_REGION))

# "SE" is both Sergipe and the Southeast region. As a bare row key it is
# always the state; region rows are written and stored as "region:<code>".
REGION_PREFIX = "region:"

_DAYS_IN_MONTH = (31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
_MONTH_ABBR = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
               "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")

CALENDAR_HEADER = ["state", "crop", "plant_start", "plant_end", "harvest_start", "harvest_end"]
CYCLES_HEADER = ["crop", "months"]

WINDOW_ANCHORS = ("planting-start", "planting-next")


@dataclass(frozen=True)
class DayMonth:
    day: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month out of range: {self.month}")
        if not 1 <= self.day <= _DAYS_IN_MONTH[self.month - 1]:
            raise ValueError(f"day {self.day} invalid for {_MONTH_ABBR[self.month - 1]}")

    @classmethod
    def parse(cls, text: str) -> "DayMonth":
        parts = text.strip().split("/")
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            raise ValueError(f"expected DD/MM, got {text!r}")
        return cls(int(parts[0]), int(parts[1]))

    def format(self) -> str:
        return f"{self.day:02d}/{self.month:02d}"


@dataclass(frozen=True)
class DateWindow:
    start: DayMonth
    end: DayMonth

    @property
    def wraps(self) -> bool:
        """True when the window crosses the year boundary (e.g. Oct to Jun)."""
        return self.end.month < self.start.month

    @classmethod
    def parse(cls, start: str, end: str) -> "DateWindow":
        return cls(DayMonth.parse(start), DayMonth.parse(end))


@dataclass(frozen=True)
class CalendarEntry:
    state: str
    crop: CropKind
    planting: DateWindow
    harvest: DateWindow


@dataclass(frozen=True)
class CalendarTable:
    """Immutable lookup of calendar entries with region fallback.

    ``entries`` is keyed by ``(state, crop)``; region rows live under
    ``("region:<code>", crop)``.
    """

    entries: Mapping[tuple[str, CropKind], CalendarEntry] = field(default_factory=dict)
    cycle_lengths: Mapping[CropKind, int] = field(
        default_factory=lambda: dict(DEFAULT_CYCLE_LENGTHS))
    state_to_region: Mapping[str, str] = field(
        default_factory=lambda: dict(STATE_TO_REGION))

    def __post_init__(self):
        missing = [c.value for c in CropKind if c not in self.cycle_lengths]
        if missing:
            raise SchemaError(f"cycle lengths missing for {', '.join(missing)}")
        for crop, months in self.cycle_lengths.items():
            if int(months) < 1:
                raise SchemaError(f"cycle length for {crop} must be >= 1, got {months}")

    def __len__(self):
        return len(self.entries)

    def cycle_length(self, crop) -> int:
        return int(self.cycle_lengths[CropKind.parse(crop)])

    def lookup(self, state: str, crop) -> CalendarEntry:
        """Return the entry for ``state``, falling back to its region."""
        crop = CropKind.parse(crop)
        state = state.strip()
        if (state, crop) in self.entries:
            return self.entries[(state, crop)]
        if state.startswith(REGION_PREFIX):
            region = state[len(REGION_PREFIX):]
        else:
            region = self.state_to_region.get(state)
        if region is not None and (REGION_PREFIX + region, crop) in self.entries:
            return self.entries[(REGION_PREFIX + region, crop)]
        raise CalendarLookupError(f"no calendar entry for state {state!r}, crop {crop.value}")

    def region_entry(self, region: str, crop) -> CalendarEntry:
        return self.lookup(REGION_PREFIX + region, crop)

    def without_state(self, state: str) -> "CalendarTable":
        entries = {k: v for k, v in self.entries.items() if k[0] != state}
        return CalendarTable(entries, self.cycle_lengths, self.state_to_region)

    def feature_window(self, state: str, crop, anchor: str = "planting-start"
                       ) -> list[tuple[int, int]]:
        """Ordered ``(year_offset, month)`` pairs feeding the dynamic input.

        The window opens at the first month of the planting window (or the
        month after it with ``anchor="planting-next"``) and spans
        ``cycle_length(crop)`` consecutive months. Months past December carry
        year offset +1 (or +2 for very long windows).
        """
        if anchor not in WINDOW_ANCHORS:
            raise ValueError(f"anchor must be one of {WINDOW_ANCHORS}, got {anchor!r}")
        entry = self.lookup(state, crop)
        n = self.cycle_length(crop)
        start = entry.planting.start.month - 1
        if anchor == "planting-next":
            start += 1
        return [((start + k) // 12, (start + k) % 12 + 1) for k in range(n)]


def feature_window(table: CalendarTable, state: str, crop, anchor: str = "planting-start"):
    return table.feature_window(state, crop, anchor)


def cycle_length(table: CalendarTable, crop) -> int:
    return table.cycle_length(crop)


def window_years(window, year: int) -> list[tuple[int, int]]:
    """Absolute ``(year, month)`` list for a window whose last month falls in ``year``."""
    last_offset = window[-1][0]
    return [(year - last_offset + off, month) for off, month in window]


def format_window(window) -> list[str]:
    return [_MONTH_ABBR[m - 1] + (f"+{off}" if off else "") for off, m in window]


def resolve_state(record) -> str:
    """State code carried by a yield/municipality record."""
    state = record.get("state") if isinstance(record, Mapping) else getattr(record, "state", None)
    if state is None or not str(state).strip():
        raise SchemaError("municipality record has no state", field="state")
    return str(state).strip()


def _read_text(source) -> tuple[str, str]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        return path.read_text(encoding="utf-8"), str(path)
    return source.read(), getattr(source, "name", "<stream>")


def _data_rows(text: str):
    """Yield ``(line_number, row)`` pairs, skipping blank and comment lines."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, next(csv.reader([line]))


def load_cycles(source) -> dict[CropKind, int]:
    text, name = _read_text(source)
    rows = _data_rows(text)
    header = next(rows, None)
    if header is None:
        return {}
    if [h.strip() for h in header[1]] != CYCLES_HEADER:
        raise SchemaError(f"{name}: bad header {header[1]}", line=header[0])
    cycles = {}
    for lineno, row in rows:
        if len(row) != 2:
            raise SchemaError(f"{name}: expected 2 fields, got {len(row)}", line=lineno)
        try:
            crop = CropKind.parse(row[0])
        except SchemaError:
            raise SchemaError(f"{name}: unknown crop {row[0]!r}", line=lineno, field="crop") from None
        try:
            months = int(row[1])
        except ValueError:
            raise SchemaError(f"{name}: months not an integer", line=lineno, field="months") from None
        if months < 1:
            raise SchemaError(f"{name}: months must be >= 1", line=lineno, field="months")
        if crop in cycles:
            raise DuplicateEntryError(f"{name}: duplicate cycle length for {crop.value}", line=lineno)
        cycles[crop] = months
    return cycles


def load_calendar(source=None, cycles=None) -> CalendarTable:
    """Parse a calendar file (and optional cycle-length file).

    With no arguments the bundled calendar and cycle lengths are loaded.
    ``cycles`` may be a path/stream or a mapping; when omitted the bundled
    per-crop cycle lengths apply.
    """
    if source is None:
        source = io.StringIO(resources.files("yieldcast.data").joinpath("calendar.csv")
                             .read_text(encoding="utf-8"))
    if cycles is None:
        cycle_lengths = dict(DEFAULT_CYCLE_LENGTHS)
    elif isinstance(cycles, Mapping):
        cycle_lengths = {CropKind.parse(k): int(v) for k, v in cycles.items()}
    else:
        cycle_lengths = load_cycles(cycles)

    text, name = _read_text(source)
    rows = _data_rows(text)
    entries: dict = {}
    header = next(rows, None)
    if header is not None and [h.strip() for h in header[1]] != CALENDAR_HEADER:
        raise SchemaError(f"{name}: bad header {header[1]}", line=header[0])
    for lineno, row in rows:
        if len(row) != len(CALENDAR_HEADER):
            raise SchemaError(f"{name}: expected {len(CALENDAR_HEADER)} fields, got {len(row)}",
                              line=lineno)
        row = [v.strip() for v in row]
        state = row[0]
        if state in STATE_TO_REGION:
            key_state = state
        elif state.startswith(REGION_PREFIX) and state[len(REGION_PREFIX):] in REGIONS:
            key_state = state
        elif state in REGIONS:
            # bare "SE" was caught above as Sergipe
            key_state = REGION_PREFIX + state
        else:
            raise SchemaError(f"{name}: unknown state or region {state!r}", line=lineno, field="state")
        try:
            crop = CropKind.parse(row[1])
        except SchemaError:
            raise SchemaError(f"{name}: unknown crop {row[1]!r}", line=lineno, field="crop") from None
        days = {}
        for col, value in zip(CALENDAR_HEADER[2:], row[2:]):
            try:
                days[col] = DayMonth.parse(value)
            except ValueError as exc:
                raise SchemaError(f"{name}: {exc}", line=lineno, field=col) from None
        if (key_state, crop) in entries:
            raise DuplicateEntryError(f"{name}: duplicate entry for {state}/{crop.value}", line=lineno)
        entries[(key_state, crop)] = CalendarEntry(
            state=key_state,
            crop=crop,
            planting=DateWindow(days["plant_start"], days["plant_end"]),
            harvest=DateWindow(days["harvest_start"], days["harvest_end"]),
        )
    return CalendarTable(entries, cycle_lengths)


def dump_calendar(table: CalendarTable) -> str:
    """Serialize the entries back into calendar-file text."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CALENDAR_HEADER)
    for (state, crop), e in table.entries.items():
        writer.writerow([state, crop.value, e.planting.start.format(), e.planting.end.format(),
                         e.harvest.start.format(), e.harvest.end.format()])
    return out.getvalue()


def dump_cycles(table: CalendarTable) -> str:
    lines = [",".join(CYCLES_HEADER)]
    lines += [f"{crop.value},{table.cycle_lengths[crop]}" for crop in CropKind]
    return "\n".join(lines) + "\n"
