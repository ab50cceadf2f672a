"""Policy quantities: CO2 savings per mode switcher and uptake attribution."""

from __future__ import annotations

from typing import Optional

from .errors import ValidationError


def co2_savings_per_switcher(
    dist_car_km: float,
    dist_pt_km: float,
    ef_car_g_per_pkm: float,
    ef_pt_g_per_pkm: float,
) -> float:
    """Round-trip kilograms of CO2 saved by one person switching car -> PT.

    2 * (dist_car * ef_car - dist_pt * ef_pt) / 1000; negative when the PT leg
    emits more than the car leg.
    """
    for name, v in (
        ("dist_car_km", dist_car_km),
        ("dist_pt_km", dist_pt_km),
        ("ef_car_g_per_pkm", ef_car_g_per_pkm),
        ("ef_pt_g_per_pkm", ef_pt_g_per_pkm),
    ):
        if v < 0:
            raise ValidationError(f"{name} must be nonnegative")
    return 2.0 * (dist_car_km * ef_car_g_per_pkm - dist_pt_km * ef_pt_g_per_pkm) / 1000.0


def attribution_summary(
    ate: float,
    uptake_share: float,
    savings_kg: Optional[float] = None,
    per_capita_transport_kg: Optional[float] = None,
) -> dict:
    """Offer-user attribution and (optionally) the national emission share.

    attributed_share = ate / uptake_share: the fraction of offer users who
    would not have taken public transport without the offer. national_share =
    savings_kg / per_capita_transport_kg when both are supplied.
    """
    if uptake_share <= 0:
        raise ValidationError("uptake_share must be > 0")
    out = {"attributed_share": ate / uptake_share, "national_share": None}
    if savings_kg is not None and per_capita_transport_kg is not None:
        if per_capita_transport_kg <= 0:
            raise ValidationError("per_capita_transport_kg must be > 0")
        out["national_share"] = savings_kg / per_capita_transport_kg
    return out
