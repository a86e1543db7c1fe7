"""Taxi trip parsing and aggregation into a dense daily demand series.

The trip CSV contract: a header row with at least the six required columns
(`pickup_datetime, dropoff_datetime, pickup_longitude, pickup_latitude,
dropoff_longitude, dropoff_latitude`), timestamps `YYYY-MM-DD HH:MM:SS` in
venue-local time. Extra columns are ignored; column order is free.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence, TextIO
from zoneinfo import ZoneInfo

from .errors import SchemaError
from .geo import GeoPoint, haversine_m
from .ioutil import atomic_writer

REQUIRED_COLUMNS = (
    "pickup_datetime",
    "dropoff_datetime",
    "pickup_longitude",
    "pickup_latitude",
    "dropoff_longitude",
    "dropoff_latitude",
)

# Plausibility bound: anything longer is treated as a data error.
MAX_TRIP_DURATION = timedelta(hours=12)


@dataclass(frozen=True)
class TripRecord:
    """One taxi trip; immutable and validated at construction."""

    pickup_time: datetime
    dropoff_time: datetime
    pickup_point: GeoPoint
    dropoff_point: GeoPoint

    def __post_init__(self):
        if self.dropoff_time < self.pickup_time:
            raise ValueError("dropoff_time before pickup_time")
        if self.pickup_point.is_null_island() or self.dropoff_point.is_null_island():
            raise ValueError("null-island sentinel coordinates")


@dataclass(frozen=True)
class VenueConfig:
    """Event venue: center point, capture radius, and local timezone."""

    name: str
    center: GeoPoint
    radius_m: float = 220.0
    timezone: str = "America/New_York"

    def __post_init__(self):
        if self.radius_m <= 0:
            raise ValueError("radius_m must be positive")
        ZoneInfo(self.timezone)  # raises for unknown IANA names


@dataclass(frozen=True)
class DailyDemand:
    """Outflow (in-radius pickups) and inflow (in-radius dropoffs) for a day."""

    date: date
    outflow: int
    inflow: int

    def __post_init__(self):
        if self.outflow < 0 or self.inflow < 0:
            raise ValueError("demand counts must be non-negative")
        if not isinstance(self.outflow, int) or not isinstance(self.inflow, int):
            raise ValueError("demand counts must be integers")


@dataclass(frozen=True)
class DateRange:
    """Inclusive calendar interval."""

    start: date
    end: date

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"empty date range: {self.start} > {self.end}")

    def __contains__(self, d: date) -> bool:
        return self.start <= d <= self.end

    def days(self) -> Iterator[date]:
        d = self.start
        while d <= self.end:
            yield d
            d += timedelta(days=1)

    @property
    def n_days(self) -> int:
        return (self.end - self.start).days + 1


class RejectionNote(NamedTuple):
    row: int  # 1-based data row index (header excluded)
    reason: str


def _parse_timestamp(raw: str) -> datetime:
    ts = datetime.fromisoformat(raw.strip())
    if ts.tzinfo is not None:
        raise ValueError("timestamps must be naive venue-local")
    return ts


def parse_trip_records(
    source: TextIO | Iterable[str],
) -> tuple[list[TripRecord], list[RejectionNote]]:
    """Parse the trip CSV, keeping input order and reporting bad rows.

    Well-formed rows become TripRecords; malformed rows are skipped and
    reported with their 1-based data-row number and a reason. A header
    missing any required column is fatal.
    """
    reader = csv.DictReader(source)
    header = reader.fieldnames
    if header is None:
        raise SchemaError("trip CSV has no header row")
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"trip CSV header missing columns: {', '.join(missing)}")

    records: list[TripRecord] = []
    rejects: list[RejectionNote] = []
    for i, row in enumerate(reader, start=1):
        try:
            pickup_time = _parse_timestamp(row["pickup_datetime"] or "")
            dropoff_time = _parse_timestamp(row["dropoff_datetime"] or "")
        except (ValueError, TypeError):
            rejects.append(RejectionNote(i, "bad timestamp"))
            continue
        try:
            plon = float(row["pickup_longitude"])
            plat = float(row["pickup_latitude"])
            dlon = float(row["dropoff_longitude"])
            dlat = float(row["dropoff_latitude"])
        except (ValueError, TypeError):
            rejects.append(RejectionNote(i, "bad coordinate"))
            continue
        if (plat, plon) == (0.0, 0.0) or (dlat, dlon) == (0.0, 0.0):
            rejects.append(RejectionNote(i, "null-island sentinel"))
            continue
        try:
            pickup_point = GeoPoint(plat, plon)
            dropoff_point = GeoPoint(dlat, dlon)
        except ValueError:
            rejects.append(RejectionNote(i, "coordinate out of range"))
            continue
        if dropoff_time < pickup_time:
            rejects.append(RejectionNote(i, "dropoff before pickup"))
            continue
        if dropoff_time - pickup_time > MAX_TRIP_DURATION:
            rejects.append(RejectionNote(i, "trip longer than 12 hours"))
            continue
        records.append(TripRecord(pickup_time, dropoff_time, pickup_point, dropoff_point))
    return records, rejects


def aggregate_daily_demand(
    trips: Sequence[TripRecord],
    venue: VenueConfig,
    date_range: DateRange,
) -> list[DailyDemand]:
    """Aggregate trips into one DailyDemand per calendar day in the range.

    A trip increments the outflow of its pickup date when the pickup point
    is within the venue radius, and the inflow of its dropoff date when the
    dropoff point is; a trip inside the radius at both ends counts once in
    each flow. Days with no qualifying trips emit (0, 0). Timestamps are
    venue-local by the CSV contract, so date attribution is direct.
    """
    outflow: dict[date, int] = {d: 0 for d in date_range.days()}
    inflow: dict[date, int] = {d: 0 for d in date_range.days()}
    for trip in trips:
        pd = trip.pickup_time.date()
        if pd in outflow and haversine_m(trip.pickup_point, venue.center) <= venue.radius_m:
            outflow[pd] += 1
        dd = trip.dropoff_time.date()
        if dd in inflow and haversine_m(trip.dropoff_point, venue.center) <= venue.radius_m:
            inflow[dd] += 1
    return [DailyDemand(d, outflow[d], inflow[d]) for d in date_range.days()]


def write_daily_demand_csv(series: Sequence[DailyDemand], path) -> None:
    with atomic_writer(path, newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "outflow", "inflow"])
        for row in series:
            writer.writerow([row.date.isoformat(), row.outflow, row.inflow])


def read_daily_demand_csv(path) -> list[DailyDemand]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            DailyDemand(date.fromisoformat(r["date"]), int(r["outflow"]), int(r["inflow"]))
            for r in reader
        ]


def demand_index(series: Sequence[DailyDemand]) -> Mapping[date, DailyDemand]:
    return {row.date: row for row in series}
