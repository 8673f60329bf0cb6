"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class SeqtteError(Exception):
    """Base class for all package errors."""


class ConfigError(SeqtteError):
    """A configuration value is missing, malformed, or inconsistent.

    ``path`` is a dotted locator into the offending config document
    (e.g. ``rule.bmi_lookback``) so CLI messages can point at the field.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DataError(SeqtteError):
    """Input data violates a structural contract (bad CSV, unknown level)."""


class RankDeficiencyError(SeqtteError):
    """Design matrix is rank deficient; carries the aliased column names."""

    def __init__(self, aliased: list[str]):
        self.aliased = list(aliased)
        super().__init__(
            "design matrix is rank deficient; aliased columns: "
            + ", ".join(self.aliased)
        )


class SeparationError(SeqtteError):
    """Logistic fit diverged consistent with (quasi-)complete separation."""

    def __init__(self, column: str, coef: float):
        self.column = column
        self.coef = coef
        super().__init__(
            f"apparent separation: coefficient for {column!r} diverged "
            f"({coef:+.2f}) with a non-vanishing gradient"
        )


class PositivityError(SeqtteError):
    """Fitted selection/treatment/retention probability fell below floor."""

    def __init__(self, target: str, min_prob: float, n_below: int, floor: float):
        self.target = target
        self.min_prob = min_prob
        self.n_below = n_below
        self.floor = floor
        super().__init__(
            f"positivity violation in {target} model: {n_below} fitted "
            f"probabilities below {floor:g} (min {min_prob:.3g})"
        )


class EstimationError(SeqtteError):
    """The outcome model cannot be fit on the supplied analysis rows."""
