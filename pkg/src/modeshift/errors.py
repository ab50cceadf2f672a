"""Exception types shared across the package."""


class ModeShiftError(Exception):
    """Base class for all package errors."""


class ValidationError(ModeShiftError):
    """Input data, schema, or configuration is invalid."""


class EstimationError(ModeShiftError):
    """An estimator could not produce a result."""


class EmptyGroupError(EstimationError):
    """A treatment or control group required by an estimator is empty."""

    def __init__(self, group: str):
        self.group = group
        super().__init__(f"group is empty: {group}")


class SeparationError(EstimationError):
    """Complete or quasi-complete separation in a logit fit."""


class CollinearityError(EstimationError):
    """Design-matrix columns are exactly collinear."""

    def __init__(self, columns):
        self.columns = tuple(columns)
        super().__init__("collinear columns: " + ", ".join(self.columns))
