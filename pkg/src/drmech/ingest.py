"""Smart-meter CSV ingestion and per-hour series extraction.

Input files carry one row per user-hour: `user_id,timestamp,kwh[,dr_event]`
with timestamps as local `YYYY-MM-DDTHH`. Hours during declared events
are flagged so downstream consumers can exclude them, since consumption
under an active incentive is not base consumption.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import date, datetime
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .errors import DomainError, IntegrityError, ParseError

__all__ = [
    "Reading",
    "MeterSeries",
    "read_meter_csv",
    "write_meter_csv",
    "hour_slice",
    "read_holidays",
]

log = logging.getLogger(__name__)

METER_CSV_HEADER = ["user_id", "timestamp", "kwh", "dr_event"]
_TS_FORMAT = "%Y-%m-%dT%H"

_TRUE_WORDS = {"true", "1", "yes"}
_FALSE_WORDS = {"false", "0", "no", ""}


class Reading(NamedTuple):
    timestamp: datetime  # local date + hour, minutes always zero
    kwh: float
    dr_event: bool


@dataclass(frozen=True)
class MeterSeries:
    """One user's hourly consumption history, strictly time-ordered."""

    user_id: str
    readings: tuple[Reading, ...]

    def __post_init__(self) -> None:
        prev = None
        for r in self.readings:
            if not (math.isfinite(r.kwh) and r.kwh >= 0):
                raise DomainError(
                    f"user {self.user_id}: kwh must be finite and >= 0, got {r.kwh}"
                )
            if prev is not None and r.timestamp <= prev:
                raise IntegrityError(
                    f"user {self.user_id}: readings not strictly increasing at {r.timestamp}"
                )
            prev = r.timestamp

    def __len__(self) -> int:
        return len(self.readings)

    @cached_property
    def _by_day_hour(self) -> dict[tuple[date, int], Reading]:
        return {(r.timestamp.date(), r.timestamp.hour): r for r in self.readings}

    def at(self, day: date, hour: int) -> Reading | None:
        """The reading for a local (day, hour), or None if absent."""
        return self._by_day_hour.get((day, hour))


def _parse_bool(token: str, line_no: int) -> bool:
    lowered = token.strip().lower()
    if lowered in _TRUE_WORDS:
        return True
    if lowered in _FALSE_WORDS:
        return False
    raise ParseError(f"line {line_no}: bad dr_event value {token!r}")


def read_meter_csv(path: str | Path) -> list[MeterSeries]:
    """Parse a meter CSV into one MeterSeries per user.

    The dr_event column is optional and defaults to false. Rows may
    arrive in any order; each user's readings come out time-sorted.
    Duplicate user-hours and malformed rows raise with the line number.
    """
    per_user: dict[str, dict[datetime, Reading]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != METER_CSV_HEADER[:3]:
            raise ParseError(f"{path}: expected header user_id,timestamp,kwh[,dr_event]")
        has_flag = len(header) >= 4
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
            user_id = row[0].strip()
            if not user_id:
                raise ParseError(f"line {line_no}: empty user_id")
            try:
                ts = datetime.strptime(row[1].strip(), _TS_FORMAT)
            except ValueError:
                raise ParseError(f"line {line_no}: bad timestamp {row[1]!r}") from None
            try:
                kwh = float(row[2])
            except ValueError:
                raise ParseError(f"line {line_no}: non-numeric kwh {row[2]!r}") from None
            if not (kwh >= 0 and kwh < float("inf")):
                raise ParseError(f"line {line_no}: kwh must be finite and >= 0, got {row[2]}")
            flag = _parse_bool(row[3], line_no) if has_flag else False
            bucket = per_user.setdefault(user_id, {})
            if ts in bucket:
                raise IntegrityError(
                    f"line {line_no}: duplicate reading for user {user_id} at "
                    f"{ts.strftime(_TS_FORMAT)}"
                )
            bucket[ts] = Reading(ts, kwh, flag)
    return [
        MeterSeries(user_id, tuple(bucket[ts] for ts in sorted(bucket)))
        for user_id, bucket in sorted(per_user.items())
    ]


def write_meter_csv(series_list: Sequence[MeterSeries], path: str | Path) -> None:
    """Write series back to the canonical CSV form read_meter_csv accepts.

    Output from this writer re-reads and re-writes byte-identically.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METER_CSV_HEADER)
        for series in series_list:
            for r in series.readings:
                writer.writerow(
                    [
                        series.user_id,
                        r.timestamp.strftime(_TS_FORMAT),
                        repr(r.kwh),
                        "true" if r.dr_event else "false",
                    ]
                )


def hour_slice(
    series: MeterSeries, hour: int, exclude_dr: bool = True
) -> list[float]:
    """All of a user's readings at a clock hour, ready for fitting.

    DR-flagged hours are removed when exclude_dr is set. Zero readings
    are always dropped (the fitted family has support above zero); the
    dropped count is logged.
    """
    if not 0 <= hour <= 23:
        raise DomainError(f"hour must be in 0..23, got {hour}")
    values = []
    zeros = 0
    for r in series.readings:
        if r.timestamp.hour != hour:
            continue
        if exclude_dr and r.dr_event:
            continue
        if r.kwh == 0.0:
            zeros += 1
            continue
        values.append(r.kwh)
    if zeros:
        log.info(
            "user %s hour %d: dropped %d zero reading(s) before fitting",
            series.user_id, hour, zeros,
        )
    return values


def read_holidays(path: str | Path) -> frozenset[date]:
    """Read a holiday calendar: one YYYY-MM-DD per line, blanks ignored."""
    days = set()
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                days.add(date.fromisoformat(text))
            except ValueError:
                raise ParseError(f"line {line_no}: bad date {text!r}") from None
    return frozenset(days)
