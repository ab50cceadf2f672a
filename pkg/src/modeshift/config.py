"""Flat key=value pipeline configuration with documented defaults.

Format: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines ignored. Unknown keys are rejected. Every key has a default, so an
empty or absent file runs the paper-style pipeline end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .data import FilterConfig
from .errors import ValidationError
from .forest import ForestConfig

# key -> (default, parser)
_BOOL = ("0", "1", "true", "false", "yes", "no")


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low not in _BOOL:
        raise ValidationError(f"expected a boolean (0/1), got {raw!r}")
    return low in ("1", "true", "yes")


def _parse_distance(raw: str) -> float:
    if raw.lower() in ("inf", "none"):
        return math.inf
    return float(raw)


_SCHEMA = {
    "filter.max_distance_km": (400.0, _parse_distance),
    "filter.min_nights": (3, int),
    "filter.require_not_aware_at_booking": (True, _parse_bool),
    "filter.drop_ga": (True, _parse_bool),
    "filter.drop_adjusted_stay": (True, _parse_bool),
    "filter.missing_policy": ("complete_case", str),
    "covariates": ("auto", str),
    "logit.tolerance": (1e-8, float),
    "logit.max_iterations": (100, int),
    "forest.num_trees": (2000, int),
    "forest.subsample_fraction": (0.5, float),
    "forest.honesty_fraction": (0.5, float),
    "forest.min_leaf_size": (5, int),
    "forest.mtry": ("auto", str),
    "bootstrap.replications": (999, int),
    "psm.trim": (False, _parse_bool),
    "impute.enabled": (False, _parse_bool),
    "impute.m": (5, int),
    "stability.enabled": (True, _parse_bool),
    "stability.field": ("half_fare", str),
    "overlap.bins": (20, int),
    "impact.ef_car_g_per_pkm": (186.4, float),
    "impact.ef_pt_g_per_pkm": (12.4, float),
    "impact.avg_distance_car_km": (165.8, float),
    "impact.avg_distance_pt_km": (187.7, float),
    "impact.per_capita_transport_kg": (1620.0, float),
    "impact.uptake_share": ("auto", str),
}


@dataclass(frozen=True)
class PipelineConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: default for k, (default, _) in _SCHEMA.items()}
        merged.update(self.values)
        object.__setattr__(self, "values", merged)

    def __getitem__(self, key: str):
        return self.values[key]

    def filter_config(self) -> FilterConfig:
        return FilterConfig(
            max_distance_km=self["filter.max_distance_km"],
            require_not_aware_at_booking=self["filter.require_not_aware_at_booking"],
            drop_ga=self["filter.drop_ga"],
            drop_adjusted_stay=self["filter.drop_adjusted_stay"],
            min_nights=self["filter.min_nights"],
            missing_policy=self["filter.missing_policy"],
        )

    def forest_config(self, seed: int) -> ForestConfig:
        mtry_raw = self["forest.mtry"]
        mtry = None if str(mtry_raw).lower() == "auto" else int(mtry_raw)
        return ForestConfig(
            num_trees=self["forest.num_trees"],
            subsample_fraction=self["forest.subsample_fraction"],
            honesty_fraction=self["forest.honesty_fraction"],
            min_leaf_size=self["forest.min_leaf_size"],
            mtry=mtry,
            seed=seed,
        )

    def covariate_list(self):
        raw = self["covariates"]
        if raw == "auto":
            return None
        return tuple(s.strip() for s in raw.split(",") if s.strip())

    def uptake_share(self):
        raw = self["impact.uptake_share"]
        if str(raw).lower() == "auto":
            return None
        return float(raw)


def parse_config(text: str) -> PipelineConfig:
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValidationError(f"config line {line_no}: expected key = value")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise ValidationError(f"config line {line_no}: unknown key {key!r}")
        _, parser = _SCHEMA[key]
        try:
            values[key] = parser(raw)
        except ValidationError:
            raise
        except ValueError as exc:
            raise ValidationError(f"config line {line_no}: bad value for {key}: {raw!r}") from exc
    return PipelineConfig(values=values)


def load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def default_config_text() -> str:
    """Render the full schema with defaults, suitable as a starter config file."""
    lines = ["# modeshift pipeline configuration (defaults shown)"]
    for key, (default, _) in _SCHEMA.items():
        if isinstance(default, bool):
            default = int(default)
        lines.append(f"{key} = {default}")
    return "\n".join(lines) + "\n"
