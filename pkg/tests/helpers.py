"""Builders shared by the test modules."""

from __future__ import annotations

import datetime as dt
from typing import Sequence

from pollencast.data import DailyRecord, Dataset

#: Valid placeholder covariates for records whose weather does not matter.
NEUTRAL_WEATHER = dict(
    tmax=15.0,
    tmin=5.0,
    tavg=10.0,
    precip=0.0,
    humidity=60.0,
    wind_speed=3.0,
    pressure=1013.0,
    sunshine_hours=6.0,
    dew_point=4.0,
    cloud_cover=40.0,
    soil_temp=8.0,
)


def make_record(date: dt.date, pollen: float, **overrides: float) -> DailyRecord:
    fields = dict(NEUTRAL_WEATHER)
    fields.update(overrides)
    return DailyRecord(date=date, pollen=pollen, **fields)


def dataset_from_pollen(pollen: Sequence[float], first_date: dt.date) -> Dataset:
    """Dataset with the given pollen series and neutral weather."""
    records = tuple(
        make_record(first_date + dt.timedelta(days=i), float(v))
        for i, v in enumerate(pollen)
    )
    return Dataset(records=records)


def year_dataset(pollen: Sequence[float], year: int = 2001) -> Dataset:
    """Single-year dataset; ``pollen`` must cover the year exactly."""
    first = dt.date(year, 1, 1)
    n_days = (dt.date(year, 12, 31) - first).days + 1
    if len(pollen) != n_days:
        raise ValueError(f"need {n_days} values for year {year}, got {len(pollen)}")
    return dataset_from_pollen(pollen, first)


def year_length(year: int) -> int:
    return (dt.date(year, 12, 31) - dt.date(year, 1, 1)).days + 1
