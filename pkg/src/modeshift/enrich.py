"""Travel-field enrichment from origin-destination lookups.

Car distance and the PT-minus-car travel-time difference normally arrive with
the survey export. When they have to be derived from postal codes, a
``RouteProvider`` supplies them; the only provider shipped is a deterministic
file-backed table (no live routing client).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Protocol

from .data import Dataset
from .errors import ValidationError


@dataclass(frozen=True)
class RouteInfo:
    distance_car_km: float
    tt_diff_min: float


class RouteProvider(Protocol):
    def route(self, origin: str, destination: str) -> Optional[RouteInfo]:
        """Return route metrics for an origin/destination pair, or None if unknown."""


class TableRouteProvider:
    """Lookup-table provider backed by a CSV with columns
    origin,destination,distance_car_km,tt_diff_min."""

    def __init__(self, table: Mapping[tuple[str, str], RouteInfo]):
        self._table = dict(table)

    @classmethod
    def from_csv(cls, source) -> "TableRouteProvider":
        if isinstance(source, str):
            source = io.StringIO(source)
        reader = csv.DictReader(source)
        expected = {"origin", "destination", "distance_car_km", "tt_diff_min"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise ValidationError(
                f"route table header must be exactly {sorted(expected)}"
            )
        table = {}
        for i, row in enumerate(reader, start=2):
            try:
                info = RouteInfo(
                    distance_car_km=float(row["distance_car_km"]),
                    tt_diff_min=float(row["tt_diff_min"]),
                )
            except ValueError as exc:
                raise ValidationError(f"malformed route table row (line {i})") from exc
            if info.distance_car_km < 0:
                raise ValidationError(f"negative distance in route table (line {i})")
            table[(row["origin"].strip(), row["destination"].strip())] = info
        return cls(table)

    def route(self, origin: str, destination: str) -> Optional[RouteInfo]:
        return self._table.get((origin, destination))


def apply_routes(
    d: Dataset,
    provider: RouteProvider,
    trips: Mapping[str, tuple[str, str]],
) -> Dataset:
    """Fill distance_car_km / tt_diff_min from the provider for mapped records.

    ``trips`` maps record id -> (origin, destination). Records without a
    mapping, or whose pair the provider does not know, are left unchanged.
    """
    out = []
    for r in d.records:
        pair = trips.get(r.id)
        info = provider.route(*pair) if pair is not None else None
        if info is None:
            out.append(r)
        else:
            out.append(
                replace(r, distance_car_km=info.distance_car_km, tt_diff_min=info.tt_diff_min)
            )
    return Dataset(records=tuple(out), provenance=d.provenance, filter_log=d.filter_log)
