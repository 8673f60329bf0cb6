"""Columnar cohort container used by the hot pipeline paths.

``SubjectRecord`` objects are the row-level contract; this module holds the
same information as flat numpy arrays so that expansion, weighting, and the
bootstrap can run vectorized. Month grids are ``0 .. t_max - 1``; ``-1``
encodes "absent" in the integer event/surgery columns and NaN encodes an
unobserved measurement month.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import (
    BASELINE_COLUMNS,
    BaselineCovariates,
    DataDictionary,
    SMOKING_LEVELS,
    SubjectRecord,
)
from .errors import DataError

_BCOL = {name: j for j, name in enumerate(BASELINE_COLUMNS)}


@dataclass
class Cohort:
    subject_ids: np.ndarray
    baseline: np.ndarray  # (K, len(BASELINE_COLUMNS))
    bmi: np.ndarray  # (K, T) observed values, NaN when unobserved
    a1c: np.ndarray
    surgery_month: np.ndarray  # (K,), -1 = never treated
    surgery_rygb: np.ndarray  # (K,), -1 = untreated, else 0/1
    event_month: np.ndarray  # (K,), -1 = no event on the grid
    censor_month: np.ndarray  # (K,), -1 = uncensored
    censor_reason: np.ndarray  # (K,) unicode, "" = uncensored
    t_max: int
    dictionary: DataDictionary = field(default_factory=DataDictionary)
    bmi_full: np.ndarray | None = None  # simulator truth, pre-masking
    a1c_full: np.ndarray | None = None
    _ffill_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_subjects(self) -> int:
        return int(self.subject_ids.size)

    def baseline_column(self, name: str) -> np.ndarray:
        try:
            return self.baseline[:, _BCOL[name]]
        except KeyError:
            raise DataError(f"unknown baseline column {name!r}") from None

    def series(self, measure: str, use_full: bool = False) -> np.ndarray:
        if measure == "bmi":
            arr = self.bmi_full if use_full else self.bmi
        elif measure == "hgba1c":
            arr = self.a1c_full if use_full else self.a1c
        else:
            raise DataError(f"unknown measure {measure!r}")
        if arr is None:
            raise DataError(f"cohort has no full-data series for {measure!r}")
        return arr

    def last_observed(self, measure: str, use_full: bool = False):
        """Per (subject, month): latest observed value at or before month.

        Returns ``(values, months)`` where ``months[k, j]`` is the month of
        the carried-forward observation or -1 when none exists yet.
        """
        key = (measure, use_full)
        if key not in self._ffill_cache:
            arr = self.series(measure, use_full)
            t = arr.shape[1]
            month_idx = np.where(~np.isnan(arr), np.arange(t)[None, :], -1)
            months = np.maximum.accumulate(month_idx, axis=1)
            gather = np.clip(months, 0, None)
            values = np.take_along_axis(arr, gather, axis=1)
            values = np.where(months >= 0, values, np.nan)
            self._ffill_cache[key] = (values, months)
        return self._ffill_cache[key]

    def resample(self, indices: np.ndarray) -> "Cohort":
        """Subject-level bootstrap view: duplicates become distinct subjects."""
        idx = np.asarray(indices)
        return Cohort(
            subject_ids=np.arange(idx.size, dtype=self.subject_ids.dtype),
            baseline=self.baseline[idx],
            bmi=self.bmi[idx],
            a1c=self.a1c[idx],
            surgery_month=self.surgery_month[idx],
            surgery_rygb=self.surgery_rygb[idx],
            event_month=self.event_month[idx],
            censor_month=self.censor_month[idx],
            censor_reason=self.censor_reason[idx],
            t_max=self.t_max,
            dictionary=self.dictionary,
            bmi_full=None if self.bmi_full is None else self.bmi_full[idx],
            a1c_full=None if self.a1c_full is None else self.a1c_full[idx],
        )

    # -- conversions to/from the row-level contract ------------------------

    @classmethod
    def from_records(
        cls,
        records: list[SubjectRecord],
        t_max: int,
        dictionary: DataDictionary | None = None,
    ) -> "Cohort":
        dictionary = dictionary or DataDictionary()
        k = len(records)
        baseline = np.empty((k, len(BASELINE_COLUMNS)))
        bmi = np.full((k, t_max), np.nan)
        a1c = np.full((k, t_max), np.nan)
        surgery = np.full(k, -1, dtype=np.int64)
        rygb = np.full(k, -1, dtype=np.int64)
        event = np.full(k, -1, dtype=np.int64)
        censor = np.full(k, -1, dtype=np.int64)
        reason = np.full(k, "", dtype="U16")
        ids = np.empty(k, dtype=np.int64)
        for i, rec in enumerate(records):
            ids[i] = rec.subject_id
            vals = rec.baseline.design_values()
            baseline[i] = [vals[c] for c in BASELINE_COLUMNS]
            for month, value in rec.bmi_series.items():
                if 0 <= month < t_max:
                    bmi[i, month] = value
                else:
                    raise DataError(
                        f"subject {rec.subject_id}: bmi month {month} outside grid"
                    )
            for month, value in rec.a1c_series.items():
                if 0 <= month < t_max:
                    a1c[i, month] = value
                else:
                    raise DataError(
                        f"subject {rec.subject_id}: a1c month {month} outside grid"
                    )
            if rec.surgery_time is not None:
                surgery[i] = rec.surgery_time
                rygb[i] = 1 if rec.surgery_type == "rygb" else 0
            if rec.event_time is not None:
                event[i] = rec.event_time
            if rec.censor_time is not None:
                censor[i] = rec.censor_time
                reason[i] = rec.censor_reason or "other"
        return cls(
            subject_ids=ids,
            baseline=baseline,
            bmi=bmi,
            a1c=a1c,
            surgery_month=surgery,
            surgery_rygb=rygb,
            event_month=event,
            censor_month=censor,
            censor_reason=reason,
            t_max=t_max,
            dictionary=dictionary,
        )

    def to_records(self) -> list[SubjectRecord]:
        out = []
        for i in range(self.n_subjects):
            row = self.baseline[i]
            smoking = "never"
            if row[_BCOL["smoking_former"]] > 0.5:
                smoking = "former"
            elif row[_BCOL["smoking_current"]] > 0.5:
                smoking = "current"
            base = BaselineCovariates(
                gender=int(row[_BCOL["gender"]]),
                race=int(row[_BCOL["race"]]),
                site=int(row[_BCOL["site"]]),
                smoking_status=smoking,
                elix_score=float(row[_BCOL["elix_score"]]),
                insulin=int(row[_BCOL["insulin"]]),
                bmi0=float(row[_BCOL["bmi0"]]),
                a1c0=float(row[_BCOL["a1c0"]]),
            )
            bmi_series = {
                int(t): float(v)
                for t, v in enumerate(self.bmi[i])
                if not np.isnan(v)
            }
            a1c_series = {
                int(t): float(v)
                for t, v in enumerate(self.a1c[i])
                if not np.isnan(v)
            }
            surgery_t = int(self.surgery_month[i])
            out.append(
                SubjectRecord(
                    subject_id=int(self.subject_ids[i]),
                    baseline=base,
                    bmi_series=bmi_series,
                    a1c_series=a1c_series,
                    surgery_time=None if surgery_t < 0 else surgery_t,
                    surgery_type=(
                        None
                        if surgery_t < 0
                        else ("rygb" if self.surgery_rygb[i] == 1 else "vsg")
                    ),
                    event_time=(
                        None if self.event_month[i] < 0 else int(self.event_month[i])
                    ),
                    censor_time=(
                        None if self.censor_month[i] < 0 else int(self.censor_month[i])
                    ),
                    censor_reason=(str(self.censor_reason[i]) or None)
                    if self.censor_month[i] >= 0
                    else None,
                )
            )
        return out


def smoking_to_dummies(levels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map integer smoking codes (0=never, 1=former, 2=current) to dummies."""
    levels = np.asarray(levels)
    return (levels == 1).astype(float), (levels == 2).astype(float)


def smoking_label_to_code(label: str) -> int:
    try:
        return SMOKING_LEVELS.index(label)
    except ValueError:
        raise DataError(f"unknown smoking_status level {label!r}") from None
