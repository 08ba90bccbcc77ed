"""Crime event ingestion, chronological series views, and the train/test split.

Times are fractional days since 1970-01-01 UTC. A series label of 0 marks a
singleton offense; labels >= 1 group crimes committed by the same offender.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

from .grid import GeoGrid, OutOfRegionError

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
SINGLETON = 0
EVENT_FIELDS = ("id", "series", "lat", "lon", "timestamp")


@dataclass(frozen=True)
class CrimeInstance:
    id: str
    lat: float
    lon: float
    t: float
    series: int
    cell: int

    @property
    def sort_key(self) -> tuple[float, str]:
        """Strict chronological order with id as the tiebreak."""
        return (self.t, self.id)


@dataclass(frozen=True)
class TestCase:
    """A held-out crime: the chronologically last offense of its series."""

    series: int
    crime: CrimeInstance


class EventStore:
    """Immutable collection of crimes with per-series chronological indexes."""

    def __init__(self, crimes: Iterable[CrimeInstance]):
        ordered = sorted(crimes, key=lambda c: c.sort_key)
        ids = [c.id for c in ordered]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate crime ids in store")
        by_series: dict[int, list[CrimeInstance]] = {}
        for c in ordered:
            if c.series < 0:
                raise ValueError(f"crime {c.id}: negative series label {c.series}")
            if c.series != SINGLETON:
                by_series.setdefault(c.series, []).append(c)
        self._crimes = tuple(ordered)
        self._series = {p: tuple(cs) for p, cs in by_series.items()}

    @property
    def crimes(self) -> tuple[CrimeInstance, ...]:
        return self._crimes

    @property
    def series_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self._series))

    @property
    def n_series(self) -> int:
        return len(self._series)

    @property
    def singletons(self) -> tuple[CrimeInstance, ...]:
        return tuple(c for c in self._crimes if c.series == SINGLETON)

    def series_events(self, p: int) -> tuple[CrimeInstance, ...]:
        if p not in self._series:
            raise KeyError(f"unknown series {p}")
        return self._series[p]

    def priors(self, p: int, t: float) -> tuple[CrimeInstance, ...]:
        """Crimes of series p strictly before time t."""
        return tuple(c for c in self.series_events(p) if c.t < t)

    def __len__(self) -> int:
        return len(self._crimes)

    def __eq__(self, other) -> bool:
        return isinstance(other, EventStore) and self._crimes == other._crimes


def prediction_time(prefix: Sequence[CrimeInstance]) -> float:
    """Evaluation time for the next hit: one day after the latest prior crime."""
    if not prefix:
        raise ValueError("prediction time undefined for an empty prior set")
    return max(c.t for c in prefix) + 1.0


@dataclass(frozen=True)
class SplitResult:
    train: EventStore
    test_cases: tuple[TestCase, ...]
    skipped_series: tuple[int, ...]  # series too short to reserve a test crime


def split_train_test(store: EventStore) -> SplitResult:
    """Reserve the chronologically last crime of each series as its test case.

    Series with a single crime contribute no test case and stay in training.
    """
    test_ids = set()
    cases = []
    skipped = []
    for p in store.series_ids:
        events = store.series_events(p)
        if len(events) < 2:
            skipped.append(p)
            continue
        last = events[-1]
        test_ids.add(last.id)
        cases.append(TestCase(series=p, crime=last))
    train = EventStore(c for c in store.crimes if c.id not in test_ids)
    return SplitResult(train=train, test_cases=tuple(cases), skipped_series=tuple(skipped))


def merge(split: SplitResult) -> EventStore:
    """Reassemble the original store from a split (inverse of split_train_test)."""
    return EventStore(list(split.train.crimes) + [case.crime for case in split.test_cases])


# -- ingestion ---------------------------------------------------------------


@dataclass(frozen=True)
class IngestResult:
    store: EventStore
    rejected: tuple[dict, ...]  # {"row": int, "reason": str}


def parse_timestamp(value: str) -> float:
    """Parse an ISO-8601 timestamp or a raw fractional-day count into days."""
    try:
        t = float(value)
    except ValueError:
        raw = value.strip().replace("Z", "+00:00")
        dt = datetime.fromisoformat(raw)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        t = (dt - EPOCH).total_seconds() / 86400.0
    if not math.isfinite(t):
        raise ValueError(f"non-finite timestamp {value!r}")
    return t


def ingest_events(records: Iterable[Mapping[str, str]], grid: GeoGrid) -> IngestResult:
    """Validate raw event rows against the grid and build an EventStore.

    Rows with duplicate ids, unparseable fields, negative series labels, or
    locations outside the bbox are dropped and reported per row (1-based).
    """
    crimes: list[CrimeInstance] = []
    rejected: list[dict] = []
    seen_ids: set[str] = set()
    for n, rec in enumerate(records, start=1):
        try:
            cid = str(rec["id"]).strip()
            if not cid:
                raise ValueError("empty id")
            if cid in seen_ids:
                raise ValueError(f"duplicate id {cid!r}")
            series = int(rec["series"])
            if series < 0:
                raise ValueError(f"series label {series} out of domain (must be >= 0)")
            lat = float(rec["lat"])
            lon = float(rec["lon"])
            t = parse_timestamp(str(rec["timestamp"]))
            cell = grid.locate(lat, lon)
        except (KeyError, ValueError, TypeError, OutOfRegionError) as exc:
            rejected.append({"row": n, "reason": str(exc)})
            continue
        seen_ids.add(cid)
        crimes.append(CrimeInstance(id=cid, lat=lat, lon=lon, t=t, series=series, cell=cell))
    return IngestResult(store=EventStore(crimes), rejected=tuple(rejected))


def read_events_csv(path: str, grid: GeoGrid) -> IngestResult:
    """Ingest events from a CSV with header id,series,lat,lon,timestamp."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(EVENT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"events CSV missing columns: {sorted(missing)}")
        return ingest_events(reader, grid)


def write_events_csv(store: EventStore, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_FIELDS)
        for c in store.crimes:
            writer.writerow([c.id, c.series, repr(c.lat), repr(c.lon), repr(c.t)])


def write_rejections(rejected: Sequence[Mapping], path: str) -> None:
    """Write the per-row rejection report as JSON lines."""
    with open(path, "w") as fh:
        for entry in rejected:
            fh.write(json.dumps(dict(entry), sort_keys=True) + "\n")
