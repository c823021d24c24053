"""Counterfactual baseline estimation.

Two estimators of what a user would have consumed without the event:
the CAISO settlement rule applied to real meter histories (same-hour
mean over the 10 most recent business days, or 4 most recent same-class
days for weekends and holidays), and the synthetic k-day average drawn
from a user's fitted distribution. The synthetic form is what the
simulation sweeps use; its estimation error is what turns into virtual
reductions, and `baseline_error_stats` measures that error directly.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DomainError, InsufficientHistoryError
from .ingest import MeterSeries
from .model import ConsumptionParams

__all__ = [
    "BaselineMethod",
    "BaselineEstimate",
    "Calendar",
    "caiso_baseline",
    "synthetic_baseline",
    "baseline_error_stats",
    "write_baselines_csv",
]

LOOKBACK_DAYS = 90
_BUSINESS_COUNT = 10
_OFFDAY_COUNT = 4
DEFAULT_EVENT_HOUR = 17  # the 5-6 pm peak hour


class BaselineMethod(enum.Enum):
    CAISO_10IN10 = "caiso_10in10"
    CAISO_4IN4_WEEKEND = "caiso_4in4_weekend"
    SYNTHETIC_K = "synthetic_k"


@dataclass(frozen=True)
class BaselineEstimate:
    value: float
    hour: int
    days_used: int
    method: BaselineMethod

    def __post_init__(self) -> None:
        if not (math.isfinite(self.value) and self.value >= 0):
            raise DomainError(f"baseline value must be finite and >= 0, got {self.value}")
        if not 0 <= self.hour <= 23:
            raise DomainError(f"hour must be in 0..23, got {self.hour}")
        if self.days_used < 1:
            raise DomainError(f"days_used must be >= 1, got {self.days_used}")


@dataclass(frozen=True)
class Calendar:
    """Day classification driving the baseline rule's two branches."""

    holidays: frozenset = frozenset()
    weekend_days: frozenset = field(default_factory=lambda: frozenset({5, 6}))

    def __post_init__(self) -> None:
        if not self.weekend_days:
            raise DomainError("weekend_days must not be empty")
        bad = [d for d in self.weekend_days if d not in range(7)]
        if bad:
            raise DomainError(f"weekend_days must be weekday numbers 0..6, got {bad}")
        object.__setattr__(self, "holidays", frozenset(self.holidays))
        object.__setattr__(self, "weekend_days", frozenset(self.weekend_days))

    def is_business_day(self, day: date) -> bool:
        return day.weekday() not in self.weekend_days and day not in self.holidays


def caiso_baseline(
    series: MeterSeries,
    event_date: date,
    hour: int,
    cal: Calendar,
    strict: bool = True,
) -> BaselineEstimate:
    """Settlement baseline for one user-hour on an event day.

    Walks backward from the day before the event, keeping only days of
    the same class (business vs weekend/holiday), and averages the
    same-hour readings of the first 10 (business) or 4 (other) days
    found. Days whose reading at the hour is DR-flagged or missing are
    skipped and the walk continues further back, at most LOOKBACK_DAYS
    before the event. The event day itself is never used.

    In strict mode an unfilled quota raises; relaxed mode settles for
    however many qualifying days exist (at least one) and reports the
    count in days_used.
    """
    if not 0 <= hour <= 23:
        raise DomainError(f"hour must be in 0..23, got {hour}")
    business = cal.is_business_day(event_date)
    needed = _BUSINESS_COUNT if business else _OFFDAY_COUNT
    method = BaselineMethod.CAISO_10IN10 if business else BaselineMethod.CAISO_4IN4_WEEKEND

    values = []
    for back in range(1, LOOKBACK_DAYS + 1):
        day = event_date - timedelta(days=back)
        if cal.is_business_day(day) != business:
            continue
        reading = series.at(day, hour)
        if reading is None or reading.dr_event:
            continue
        values.append(reading.kwh)
        if len(values) == needed:
            break

    if len(values) < needed:
        if strict or not values:
            raise InsufficientHistoryError(
                f"user {series.user_id}: {len(values)} qualifying day(s) at hour "
                f"{hour} within {LOOKBACK_DAYS} days before {event_date}, need {needed}"
            )
    return BaselineEstimate(
        value=math.fsum(values) / len(values),
        hour=hour,
        days_used=len(values),
        method=method,
    )


def synthetic_baseline(
    params: ConsumptionParams,
    k: int,
    rng: np.random.Generator,
    hour: int = DEFAULT_EVENT_HOUR,
) -> BaselineEstimate:
    """Mean of k fresh draws from the user's consumption distribution.

    This is the unbiased stand-in for a k-day meter average when the
    pipeline runs on sampled rather than recorded users; deterministic
    for a given generator state.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    z = rng.standard_normal(k)
    draws = params.loc + params.scale * np.exp(params.sigma * z)
    return BaselineEstimate(
        value=float(draws.mean()),
        hour=hour,
        days_used=k,
        method=BaselineMethod.SYNTHETIC_K,
    )


def baseline_error_stats(
    params: ConsumptionParams,
    k: int,
    reps: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Sample mean and variance of the baseline error x_hat - xbar.

    Each replication draws a k-day baseline and an independent event-day
    consumption. In theory the error has mean 0 and variance
    Var[xbar] * (1 + 1/k): the event day contributes the full variance,
    the baseline average a 1/k share.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if reps < 100:
        raise DomainError(f"reps must be >= 100, got {reps}")
    errors = np.empty(reps)
    # Chunked so reps * k never materializes at once for large k.
    chunk = max(1, int(20_000_000 // (k + 1)))
    done = 0
    while done < reps:
        m = min(chunk, reps - done)
        z = rng.standard_normal((m, k + 1))
        draws = params.loc + params.scale * np.exp(params.sigma * z)
        x_hat = draws[:, :k].mean(axis=1)
        x_bar = draws[:, k]
        errors[done : done + m] = x_hat - x_bar
        done += m
    return float(errors.mean()), float(errors.var(ddof=1))


def write_baselines_csv(
    rows: Iterable[tuple[str, date, BaselineEstimate]], path: str | Path
) -> None:
    """Write estimates as `user_id,date,hour,method,days_used,value_kwh`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "date", "hour", "method", "days_used", "value_kwh"])
        for user_id, day, est in rows:
            writer.writerow(
                [
                    user_id,
                    day.isoformat(),
                    est.hour,
                    est.method.value,
                    est.days_used,
                    repr(est.value),
                ]
            )
