"""Guest survey records: CSV schema, validation, eligibility filters, descriptives.

The on-disk format is a UTF-8 comma-separated file with a header row of the
exact lowercase column names in ``COLUMNS``. Booleans are written as 0/1 and a
missing value is an empty cell, permitted only for the five nullable fields.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EmptyGroupError, ValidationError

REGIONS = ("AppenzellInnerrhoden", "AusserrhodenToggenburg")

# Column order of the CSV schema.
COLUMNS = (
    "id",
    "informed",
    "used_pt",
    "used_offer",
    "hotel_ratio_informed",
    "holiday_flat",
    "train_access",
    "alone",
    "family",
    "purpose_nature",
    "length_of_stay",
    "distance_car_km",
    "tt_diff_min",
    "swiss_residence",
    "car_owner",
    "half_fare",
    "ga_travelcard",
    "age",
    "woman",
    "high_income",
    "aware_at_booking",
    "adjusted_stay",
    "region",
)

# The only fields that may be empty in the CSV / None on a record.
NULLABLE_FIELDS = ("age", "woman", "high_income", "car_owner", "tt_diff_min")

BINARY_FIELDS = (
    "informed",
    "used_pt",
    "used_offer",
    "holiday_flat",
    "train_access",
    "alone",
    "family",
    "purpose_nature",
    "swiss_residence",
    "car_owner",
    "half_fare",
    "ga_travelcard",
    "woman",
    "high_income",
    "aware_at_booking",
    "adjusted_stay",
)

# Everything numeric (summaries run over these; id/region excluded).
NUMERIC_FIELDS = tuple(c for c in COLUMNS if c not in ("id", "region"))

# Matching / adjustment covariates: accommodation, trip, mobility-tool and
# socio-demographic characteristics. Treatment, outcome and sample-definition
# fields are deliberately not in this list.
ESTIMATION_COVARIATES = (
    "hotel_ratio_informed",
    "holiday_flat",
    "train_access",
    "alone",
    "family",
    "purpose_nature",
    "length_of_stay",
    "distance_car_km",
    "tt_diff_min",
    "swiss_residence",
    "car_owner",
    "half_fare",
    "ga_travelcard",
    "age",
    "woman",
    "high_income",
)


@dataclass(frozen=True)
class GuestRecord:
    """One survey respondent.

    ``informed`` is the binary treatment (hotelier told the guest about the
    free arrival/departure ticket), ``used_pt`` the binary outcome (guest
    traveled by public transport). The five nullable fields may be ``None``.
    """

    id: str
    informed: int
    used_pt: int
    used_offer: int
    hotel_ratio_informed: float
    holiday_flat: int
    train_access: int
    alone: int
    family: int
    purpose_nature: int
    length_of_stay: int
    distance_car_km: float
    tt_diff_min: Optional[float]
    swiss_residence: int
    car_owner: Optional[int]
    half_fare: int
    ga_travelcard: int
    age: Optional[float]
    woman: Optional[int]
    high_income: Optional[int]
    aware_at_booking: int
    adjusted_stay: int
    region: str

    def __post_init__(self):
        for name in BINARY_FIELDS:
            v = getattr(self, name)
            if v is not None and v not in (0, 1):
                raise ValidationError(
                    f"field {name} must be 0 or 1, got {v!r} (id={self.id})"
                )
        if not 0.0 <= self.hotel_ratio_informed <= 1.0:
            raise ValidationError(
                f"field hotel_ratio_informed must be in [0,1], got "
                f"{self.hotel_ratio_informed!r} (id={self.id})"
            )
        if self.distance_car_km < 0:
            raise ValidationError(
                f"field distance_car_km must be >= 0, got "
                f"{self.distance_car_km!r} (id={self.id})"
            )
        if self.length_of_stay < 1:
            raise ValidationError(
                f"field length_of_stay must be >= 1, got "
                f"{self.length_of_stay!r} (id={self.id})"
            )
        if self.region not in REGIONS:
            raise ValidationError(
                f"field region must be one of {REGIONS}, got {self.region!r} "
                f"(id={self.id})"
            )
        if self.used_offer == 1 and not (self.informed == 1 or self.aware_at_booking == 1):
            raise ValidationError(
                f"used_offer=1 requires informed=1 or aware_at_booking=1 (id={self.id})"
            )

    def is_missing(self, name: str) -> bool:
        return getattr(self, name) is None

    def has_missing(self) -> bool:
        return any(getattr(self, f) is None for f in NULLABLE_FIELDS)


@dataclass(frozen=True)
class FilterLogEntry:
    """Records which rule dropped which ids."""

    rule: str
    dropped_ids: tuple[str, ...]

    @property
    def count(self) -> int:
        return len(self.dropped_ids)


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered collection of guest records plus its filter history."""

    records: tuple[GuestRecord, ...]
    provenance: str = ""
    filter_log: tuple[FilterLogEntry, ...] = ()

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise ValidationError(f"duplicate id: {r.id}")
            seen.add(r.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    def column(self, name: str) -> np.ndarray:
        """Field values as a float array; missing values become NaN."""
        if name not in NUMERIC_FIELDS:
            raise ValidationError(f"column {name} is not numeric")
        return np.array(
            [math.nan if getattr(r, name) is None else float(getattr(r, name)) for r in self.records],
            dtype=float,
        )

    def covariate_matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named columns into an (n, p) float matrix (NaN for missing)."""
        if len(self.records) == 0:
            return np.empty((0, len(names)), dtype=float)
        return np.column_stack([self.column(n) for n in names])

    def complete_cases(self) -> "Dataset":
        """Subset to records with no missing field (no filter-log entry)."""
        kept = tuple(r for r in self.records if not r.has_missing())
        return Dataset(records=kept, provenance=self.provenance, filter_log=self.filter_log)


@dataclass(frozen=True)
class FilterConfig:
    """Eligibility restrictions applied before estimation."""

    max_distance_km: float = 400.0
    require_not_aware_at_booking: bool = True
    drop_ga: bool = True
    drop_adjusted_stay: bool = True
    min_nights: int = 3
    missing_policy: str = "complete_case"

    def __post_init__(self):
        if not self.max_distance_km > 0:
            raise ValidationError("max_distance_km must be > 0")
        if self.min_nights < 1:
            raise ValidationError("min_nights must be >= 1")
        if self.missing_policy not in ("complete_case", "pass_through"):
            raise ValidationError(
                f"missing_policy must be complete_case or pass_through, got {self.missing_policy!r}"
            )


def _parse_cell(name: str, raw: str, line: int):
    raw = raw.strip()
    if raw == "":
        if name in NULLABLE_FIELDS:
            return None
        raise ValidationError(f"missing value for non-nullable field {name} (line {line})")
    if name == "id":
        return raw
    if name == "region":
        return raw
    try:
        if name in BINARY_FIELDS or name == "length_of_stay":
            value = int(raw)
        else:
            value = float(raw)
    except ValueError as exc:
        raise ValidationError(f"malformed value {raw!r} for field {name} (line {line})") from exc
    return value


def parse_dataset(source, allow_extra: bool = False, provenance: str = "") -> Dataset:
    """Parse the CSV schema from a string or text stream into a Dataset.

    Unknown header columns are rejected unless ``allow_extra`` is set, in
    which case they are ignored. Errors report the offending field and the
    1-based file line (header is line 1).
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError("empty input: missing header row") from None
    header = [h.strip() for h in header]
    unknown = [h for h in header if h not in COLUMNS]
    if unknown and not allow_extra:
        raise ValidationError(f"unknown columns: {', '.join(unknown)}")
    missing_cols = [c for c in COLUMNS if c not in header]
    if missing_cols:
        raise ValidationError(f"missing columns: {', '.join(missing_cols)}")
    if len(set(header)) != len(header):
        raise ValidationError("duplicate header columns")
    positions = {name: header.index(name) for name in COLUMNS}

    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and row[0].strip() == ""):
            continue
        if len(row) != len(header):
            raise ValidationError(
                f"malformed row: expected {len(header)} cells, got {len(row)} (line {line_no})"
            )
        values = {name: _parse_cell(name, row[positions[name]], line_no) for name in COLUMNS}
        try:
            records.append(GuestRecord(**values))
        except ValidationError as exc:
            raise ValidationError(f"{exc} (line {line_no})") from None
    return Dataset(records=tuple(records), provenance=provenance)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_dataset(d: Dataset) -> str:
    """Render records back into the CSV schema (round-trips through parse)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in d.records:
        writer.writerow([_format_cell(getattr(r, c)) for c in COLUMNS])
    return out.getvalue()


def apply_eligibility_filters(d: Dataset, cfg: FilterConfig) -> Dataset:
    """Drop ineligible records in the fixed rule order, logging per-rule drops.

    Rule order: short stay, aware at booking, GA travelcard, distance cap,
    adjusted stay, missing values (complete-case policy only). A record
    matching several rules is attributed to the first. Disabled rules still
    appear in the log with zero drops so counts always reconcile.
    """
    rules = [("min_nights", lambda r: r.length_of_stay < cfg.min_nights)]
    if cfg.require_not_aware_at_booking:
        rules.append(("aware_at_booking", lambda r: r.aware_at_booking == 1))
    if cfg.drop_ga:
        rules.append(("ga_travelcard", lambda r: r.ga_travelcard == 1))
    rules.append(("max_distance", lambda r: r.distance_car_km > cfg.max_distance_km))
    if cfg.drop_adjusted_stay:
        rules.append(("adjusted_stay", lambda r: r.adjusted_stay == 1))
    if cfg.missing_policy == "complete_case":
        rules.append(("missing", lambda r: r.has_missing()))

    dropped: dict[str, list[str]] = {name: [] for name, _ in rules}
    kept = []
    for r in d.records:
        for name, pred in rules:
            if pred(r):
                dropped[name].append(r.id)
                break
        else:
            kept.append(r)

    log = d.filter_log + tuple(
        FilterLogEntry(rule=name, dropped_ids=tuple(ids)) for name, ids in dropped.items()
    )
    return Dataset(records=tuple(kept), provenance=d.provenance, filter_log=log)


@dataclass(frozen=True)
class SummaryRow:
    field: str
    mean_informed: float
    sd_informed: float
    n_informed: int
    mean_uninformed: float
    sd_uninformed: float
    n_uninformed: int


@dataclass(frozen=True)
class TreatmentSummary:
    rows: tuple[SummaryRow, ...]
    n_informed: int
    n_uninformed: int


def _mean_sd(values: np.ndarray) -> tuple[float, float, int]:
    values = values[~np.isnan(values)]
    n = len(values)
    if n == 0:
        return math.nan, math.nan, 0
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1)) if n > 1 else 0.0
    return mean, sd, n


def summarize_by_treatment(d: Dataset) -> TreatmentSummary:
    """Per-field mean and n-1 standard deviation for the informed / uninformed groups."""
    informed = d.column("informed")
    mask_t = informed == 1
    mask_c = informed == 0
    if not mask_t.any():
        raise EmptyGroupError("informed")
    if not mask_c.any():
        raise EmptyGroupError("uninformed")
    rows = []
    for name in NUMERIC_FIELDS:
        col = d.column(name)
        mt, st, nt = _mean_sd(col[mask_t])
        mc, sc, nc = _mean_sd(col[mask_c])
        rows.append(
            SummaryRow(
                field=name,
                mean_informed=mt,
                sd_informed=st,
                n_informed=nt,
                mean_uninformed=mc,
                sd_uninformed=sc,
                n_uninformed=nc,
            )
        )
    return TreatmentSummary(
        rows=tuple(rows), n_informed=int(mask_t.sum()), n_uninformed=int(mask_c.sum())
    )


def usable_covariates(d: Dataset, candidates: Sequence[str] = ESTIMATION_COVARIATES) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Split candidate covariates into (usable, dropped-for-zero-variance).

    Zero-variance columns (e.g. ga_travelcard after the GA filter) would be
    exactly collinear with the intercept in a logit fit.
    """
    usable, dropped = [], []
    for name in candidates:
        col = d.column(name)
        col = col[~np.isnan(col)]
        if len(col) == 0 or np.all(col == col[0]):
            dropped.append(name)
        else:
            usable.append(name)
    return tuple(usable), tuple(dropped)


def filter_log_json(d: Dataset) -> list[dict]:
    """Filter log as JSON-ready per-rule counts and dropped ids."""
    return [
        {"rule": e.rule, "count": e.count, "dropped_ids": list(e.dropped_ids)}
        for e in d.filter_log
    ]
