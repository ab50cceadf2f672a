"""Shared effect-estimate container."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import ValidationError

ESTIMANDS = ("ATE", "ATO")


@dataclass(frozen=True)
class EffectEstimate:
    """Point estimate of a treatment effect on the probability scale.

    standard_error and p_value stay None until an inference step fills them.
    """

    estimate: float
    standard_error: Optional[float]
    p_value: Optional[float]
    estimand: str
    method: str
    n_used: int
    seed: Optional[int] = None

    def __post_init__(self):
        if self.estimand not in ESTIMANDS:
            raise ValidationError(f"estimand must be one of {ESTIMANDS}, got {self.estimand!r}")
        if self.standard_error is not None and self.standard_error < 0:
            raise ValidationError("standard_error must be >= 0")
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ValidationError("p_value must be in [0, 1]")
        if self.n_used < 0:
            raise ValidationError("n_used must be >= 0")

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "standard_error": self.standard_error,
            "p_value": self.p_value,
            "estimand": self.estimand,
            "method": self.method,
            "n_used": self.n_used,
            "seed": self.seed,
        }
