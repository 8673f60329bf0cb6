"""Core data model shared by the simulator, expansion, weighting, and
estimation layers.

Subjects are stored on a discrete monthly clock indexed from study start.
Measurement series are sparse maps month -> value; a missing month means
no measurement was observed then. Trial ``m`` (1-indexed) baselines at the
start of month ``m - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError, DataError

SMOKING_LEVELS = ("never", "former", "current")
SURGERY_TYPES = ("rygb", "vsg")
CENSOR_REASONS = (
    "death",
    "disenrollment",
    "cancer",
    "measurement_gap",
    "end_of_study",
    "other",
)

#: Baseline design columns, in canonical order. Categorical race/site enter
#: as their integer codes; smoking enters as two dummies against "never".
BASELINE_COLUMNS = (
    "gender",
    "race",
    "site",
    "smoking_former",
    "smoking_current",
    "insulin",
    "elix_score",
    "bmi0",
    "a1c0",
)

#: Time-varying design columns available on person-trial-period rows.
TIME_VARYING_COLUMNS = ("bmi", "hgba1c")

#: Columns that define eligibility; selection-weight models must not use them.
ELIGIBILITY_COLUMNS = frozenset({"bmi", "hgba1c", "bmi0", "a1c0"})


@dataclass(frozen=True)
class DataDictionary:
    """Declared categorical levels; unknown levels are load errors."""

    race_levels: tuple[str, ...] = ("0", "1")
    site_levels: tuple[str, ...] = ("0", "1")

    def __post_init__(self):
        for name, levels in (("race", self.race_levels), ("site", self.site_levels)):
            if len(levels) < 2 or len(set(levels)) != len(levels):
                raise ConfigError(
                    f"{name} levels must be >= 2 distinct labels",
                    path=f"dictionary.{name}_levels",
                )


@dataclass(frozen=True)
class BaselineCovariates:
    gender: int
    race: int
    site: int
    smoking_status: str
    elix_score: float
    insulin: int
    bmi0: float
    a1c0: float

    def design_values(self) -> dict[str, float]:
        return {
            "gender": float(self.gender),
            "race": float(self.race),
            "site": float(self.site),
            "smoking_former": float(self.smoking_status == "former"),
            "smoking_current": float(self.smoking_status == "current"),
            "insulin": float(self.insulin),
            "elix_score": float(self.elix_score),
            "bmi0": float(self.bmi0),
            "a1c0": float(self.a1c0),
        }


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: int
    baseline: BaselineCovariates
    bmi_series: dict[int, float] = field(default_factory=dict)
    a1c_series: dict[int, float] = field(default_factory=dict)
    surgery_time: int | None = None
    surgery_type: str | None = None
    event_time: int | None = None
    censor_time: int | None = None
    censor_reason: str | None = None

    def with_masked_series(self, bmi, a1c) -> "SubjectRecord":
        return replace(self, bmi_series=dict(bmi), a1c_series=dict(a1c))


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.field}: {self.message} [{self.rule}]"


def validate_subject(
    record: SubjectRecord,
    t_max: int | None = None,
    dictionary: DataDictionary | None = None,
) -> list[Violation]:
    """Return all invariant violations (empty list means the record is valid)."""
    dictionary = dictionary or DataDictionary()
    out: list[Violation] = []

    def bad(field_name, rule, message):
        out.append(Violation(field_name, rule, message))

    base = record.baseline
    if base.gender not in (0, 1):
        bad("baseline.gender", "binary", f"value {base.gender!r} is not 0/1")
    if base.insulin not in (0, 1):
        bad("baseline.insulin", "binary", f"value {base.insulin!r} is not 0/1")
    if not 0 <= base.race < len(dictionary.race_levels):
        bad("baseline.race", "declared-level", f"code {base.race!r} undeclared")
    if not 0 <= base.site < len(dictionary.site_levels):
        bad("baseline.site", "declared-level", f"code {base.site!r} undeclared")
    if base.smoking_status not in SMOKING_LEVELS:
        bad(
            "baseline.smoking_status",
            "declared-level",
            f"level {base.smoking_status!r} undeclared",
        )
    for name, value in (("bmi0", base.bmi0), ("a1c0", base.a1c0)):
        if not (math.isfinite(value) and value > 0):
            bad(f"baseline.{name}", "positive-measurement",
                f"value {value!r} is not finite and positive")
    if not math.isfinite(base.elix_score):
        bad("baseline.elix_score", "finite", f"value {base.elix_score!r}")

    def check_months(name, months):
        for month in months:
            if month < 0 or (t_max is not None and month > t_max):
                bad(name, "month-range", f"month {month} outside [0, T_max]")

    for name, series in (("bmi_series", record.bmi_series),
                         ("a1c_series", record.a1c_series)):
        check_months(name, series)
        for month, value in series.items():
            if not (math.isfinite(value) and value > 0):
                bad(f"{name}[{month}]", "positive-measurement",
                    f"value {value!r} is not finite and positive")

    for name in ("surgery_time", "event_time", "censor_time"):
        value = getattr(record, name)
        if value is not None:
            check_months(name, [value])

    if record.surgery_time is not None and record.surgery_type is None:
        bad("surgery_type", "surgery-typed", "surgery_time set without surgery_type")
    if record.surgery_type is not None and record.surgery_type not in SURGERY_TYPES:
        bad("surgery_type", "declared-level",
            f"type {record.surgery_type!r} undeclared")
    if record.censor_reason is not None and record.censor_reason not in CENSOR_REASONS:
        bad("censor_reason", "declared-level",
            f"reason {record.censor_reason!r} undeclared")
    return out


@dataclass(frozen=True)
class EligibilityRule:
    """Deterministic eligibility rule evaluated at each trial baseline.

    Thresholds are inclusive (">="). A measurement establishes a criterion
    if it is the most recent value in the half-open lookback window
    ``(trial_start - lookback, trial_start]``. When
    ``treated_implies_eligible`` is set, a subject initiating surgery in the
    trial's first interval satisfies the BMI criterion without a
    measurement (treatment initiation presumes the clinical BMI minimum).
    """

    bmi_threshold: float | None = None
    a1c_threshold: float | None = None
    require_no_prior_surgery: bool = True
    bmi_lookback: int = 1
    a1c_lookback: int = 1
    treated_implies_eligible: bool = False

    def __post_init__(self):
        if (
            self.bmi_threshold is None
            and self.a1c_threshold is None
            and not self.require_no_prior_surgery
        ):
            raise ConfigError("at least one eligibility criterion is required",
                              path="rule")
        if self.bmi_lookback < 1:
            raise ConfigError("lookback must be >= 1 month",
                              path="rule.bmi_lookback")
        if self.a1c_lookback < 1:
            raise ConfigError("lookback must be >= 1 month",
                              path="rule.a1c_lookback")

    def to_dict(self) -> dict:
        return {
            "bmi_threshold": self.bmi_threshold,
            "a1c_threshold": self.a1c_threshold,
            "require_no_prior_surgery": self.require_no_prior_surgery,
            "bmi_lookback": self.bmi_lookback,
            "a1c_lookback": self.a1c_lookback,
            "treated_implies_eligible": self.treated_implies_eligible,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EligibilityRule":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown fields: {sorted(unknown)}", path="rule")
        return cls(**known)


@dataclass(frozen=True)
class PersonTrialPeriod:
    """One row of the pooled analysis table.

    ``y`` is the event indicator for the interval ending at trial time
    ``period + 1``; ``e`` is present iff ``r`` is 1.
    """

    trial: int
    subject_id: int
    period: int
    y: int
    a_base: int
    n: int
    c: int
    r: int
    e: int | None
    l_base: dict[str, float] = field(default_factory=dict)
    l_t: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if (self.e is None) != (self.r == 0):
            raise DataError(
                f"row (m={self.trial}, k={self.subject_id}, t={self.period}): "
                "eligibility must be present exactly when ascertained"
            )
