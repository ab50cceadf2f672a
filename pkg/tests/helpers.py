"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np

from modeshift.data import COLUMNS, Dataset, GuestRecord

BASE_RECORD = dict(
    informed=0,
    used_pt=0,
    used_offer=0,
    hotel_ratio_informed=0.5,
    holiday_flat=0,
    train_access=1,
    alone=0,
    family=0,
    purpose_nature=1,
    length_of_stay=3,
    distance_car_km=150.0,
    tt_diff_min=90.0,
    swiss_residence=1,
    car_owner=1,
    half_fare=1,
    ga_travelcard=0,
    age=50.0,
    woman=0,
    high_income=0,
    aware_at_booking=0,
    adjusted_stay=0,
    region="AppenzellInnerrhoden",
)


def make_record(id: str, **overrides) -> GuestRecord:
    values = dict(BASE_RECORD)
    values.update(overrides)
    return GuestRecord(id=id, **values)


def make_dataset(*records, **kwargs) -> Dataset:
    return Dataset(records=tuple(records), **kwargs)


def csv_line(record: GuestRecord) -> str:
    cells = []
    for c in COLUMNS:
        v = getattr(record, c)
        cells.append("" if v is None else (repr(v) if isinstance(v, float) else str(v)))
    return ",".join(cells)


def csv_text(*records) -> str:
    lines = [",".join(COLUMNS)]
    lines.extend(csv_line(r) for r in records)
    return "\n".join(lines) + "\n"


def scored_dataset(spec):
    """Build (dataset, scores) from (informed, score, outcome) triples."""
    records = []
    scores = []
    for i, (informed, score, outcome) in enumerate(spec):
        records.append(make_record(f"u{i:03d}", informed=informed, used_pt=outcome))
        scores.append(score)
    return make_dataset(*records), np.array(scores, dtype=float)
