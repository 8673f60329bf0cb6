"""Sequential-trial expansion into a pooled person-trial-period table.

Trial ``m`` (1-indexed, ``m <= M``) baselines at the start of month
``m - 1``. Follow-up for trial ``m`` spans periods ``t = 0 .. t_max-m-1``
(the study's administrative end cuts follow-up at the start of the last
simulated month), so with no attrition the pooled table has exactly
``K * M * (t_max - (M+1)/2)`` rows.

A subject-trial enters the at-risk set when the subject is event-free,
uncensored, and not already treated at baseline (initiating that month is
allowed). Eligibility is then ascertained from the most recent
measurement per criterion in the half-open lookback window
``(baseline - lookback, baseline]``; any required measurement missing
means the trial's eligibility is unascertainable (R = 0). In
per-protocol mode a control's first post-baseline surgery month yields a
terminal row flagged N = 1 that weight models may consume but the outcome
model must not; censoring rows are handled the same way via C.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .cohort import Cohort
from .domain import (
    BASELINE_COLUMNS,
    EligibilityRule,
    SubjectRecord,
)
from .errors import ConfigError, DataError

_BIG = np.iinfo(np.int64).max // 4


def ascertain_eligibility(
    record: SubjectRecord, trial_start: int, rule: EligibilityRule
):
    """Record-level eligibility ascertainment at one trial baseline.

    Returns ``(r, e, snapshot)`` where ``e`` is None when ``r`` is 0 and
    the snapshot holds the measurement values the decision used.
    """
    if trial_start < 0:
        raise ConfigError("trial_start must be >= 0", path="trial_start")

    def most_recent(series: dict[int, float], lookback: int):
        window = [m for m in series if trial_start - lookback < m <= trial_start]
        if not window:
            return None
        return series[max(window)]

    initiator = record.surgery_time == trial_start
    snapshot: dict[str, float | None] = {}
    r = 1
    criteria: list[bool] = []

    if rule.bmi_threshold is not None:
        value = most_recent(record.bmi_series, rule.bmi_lookback)
        snapshot["bmi"] = value
        if rule.treated_implies_eligible and initiator:
            criteria.append(True)
        elif value is None:
            r = 0
        else:
            criteria.append(value >= rule.bmi_threshold)
    if rule.a1c_threshold is not None:
        value = most_recent(record.a1c_series, rule.a1c_lookback)
        snapshot["hgba1c"] = value
        if value is None:
            r = 0
        else:
            criteria.append(value >= rule.a1c_threshold)
    if r == 0:
        return 0, None, snapshot
    if rule.require_no_prior_surgery:
        criteria.append(
            record.surgery_time is None or record.surgery_time >= trial_start
        )
    return 1, int(all(criteria)), snapshot


def _window_lookup(cohort: Cohort, measure: str, b: int, lookback: int, use_full):
    values, months = cohort.last_observed(measure, use_full=use_full)
    lo = max(b - lookback + 1, 0)
    found = months[:, b] >= lo
    return found, values[:, b]


def _ascertain_trial(cohort: Cohort, b: int, rule: EligibilityRule, use_full: bool):
    """Vectorized (r, e) over all subjects for the trial baselined at b."""
    k = cohort.n_subjects
    initiator = cohort.surgery_month == b
    r = np.ones(k, dtype=bool)
    e = np.ones(k, dtype=bool)
    if rule.bmi_threshold is not None:
        found, value = _window_lookup(cohort, "bmi", b, rule.bmi_lookback, use_full)
        auto = rule.treated_implies_eligible & initiator
        r &= found | auto
        with np.errstate(invalid="ignore"):
            e &= auto | (value >= rule.bmi_threshold)
    if rule.a1c_threshold is not None:
        found, value = _window_lookup(cohort, "hgba1c", b, rule.a1c_lookback, use_full)
        r &= found
        with np.errstate(invalid="ignore"):
            e &= value >= rule.a1c_threshold
    if rule.require_no_prior_surgery:
        e &= (cohort.surgery_month < 0) | (cohort.surgery_month >= b)
    return r, np.where(r, e, False)


@dataclass
class BaselineTable:
    """One row per at-risk subject-trial (the selection-model population)."""

    trial: np.ndarray
    subject: np.ndarray  # cohort row index
    a_base: np.ndarray
    r: np.ndarray
    e: np.ndarray  # float; NaN exactly where r == 0
    cohort: Cohort

    @property
    def n_rows(self) -> int:
        return int(self.trial.size)

    def column(self, name: str) -> np.ndarray:
        return _column(self, name, month=self.trial - 1)

    def included(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return (self.r == 1) & (self.e == 1)


@dataclass
class PooledTable:
    """Pooled person-trial-period rows, columnar."""

    trial: np.ndarray
    subject: np.ndarray  # cohort row index
    period: np.ndarray
    y: np.ndarray
    a_base: np.ndarray
    n: np.ndarray
    c: np.ndarray
    mode: str
    cohort: Cohort
    baseline_table: BaselineTable

    @property
    def n_rows(self) -> int:
        return int(self.trial.size)

    @property
    def month(self) -> np.ndarray:
        return self.trial - 1 + self.period

    def column(self, name: str) -> np.ndarray:
        return _column(self, name, month=self.month)

    def subject_ids(self) -> np.ndarray:
        return self.cohort.subject_ids[self.subject]

    def to_dataframe(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "trial": self.trial,
                "subject_id": self.subject_ids(),
                "period": self.period,
                "y": self.y.astype(int),
                "a_base": self.a_base.astype(int),
                "n": self.n.astype(int),
                "c": self.c.astype(int),
                "r": 1,
                "e": 1,
            }
        )
        for name in BASELINE_COLUMNS:
            frame[name] = self.column(name)
        for name in ("bmi", "hgba1c"):
            frame[name] = self.column(name)
        return frame


def _column(table, name: str, month: np.ndarray) -> np.ndarray:
    cohort = table.cohort
    if name in BASELINE_COLUMNS:
        return cohort.baseline_column(name)[table.subject]
    if name in ("bmi", "hgba1c"):
        values, _ = cohort.last_observed(name)
        return values[table.subject, month]
    if name in ("surgery", "a_base"):
        return table.a_base.astype(float)
    if name == "period":
        return table.period.astype(float)
    if name == "trial":
        return table.trial.astype(float)
    raise DataError(f"unknown analysis column {name!r}")


def expand(
    cohort: Cohort,
    n_trials: int,
    rule: EligibilityRule,
    mode: str = "pp",
    use_full: bool = False,
) -> PooledTable:
    """Build the pooled table for trials ``1 .. n_trials``.

    ``mode`` is ``"pp"`` (follow-up artificially censored at first
    non-adherence, terminal row flagged N = 1) or ``"itt"`` (rows continue
    past treatment switches). ``use_full`` ascertains eligibility from the
    pre-masking series when the cohort carries them (oracle analyses).
    """
    mode = mode.lower()
    if mode not in ("pp", "itt"):
        raise ConfigError(f"mode must be 'pp' or 'itt', got {mode!r}", path="mode")
    t_max = cohort.t_max
    if n_trials > t_max:
        raise ConfigError(
            f"n_trials={n_trials} exceeds t_max={t_max}", path="n_trials"
        )
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1", path="n_trials")

    event = cohort.event_month
    censor = cohort.censor_month
    nu = cohort.surgery_month

    bl_trial, bl_subject, bl_a, bl_r, bl_e = [], [], [], [], []
    rows_trial, rows_subject, rows_t = [], [], []
    rows_y, rows_a, rows_n, rows_c = [], [], [], []

    for m in range(1, n_trials + 1):
        b = m - 1
        at_risk = (
            ((event < 0) | (event >= b))
            & ((censor < 0) | (censor >= b))
            & ((nu < 0) | (nu >= b))
        )
        risk_idx = np.nonzero(at_risk)[0]
        if risk_idx.size == 0:
            continue
        r, e = _ascertain_trial(cohort, b, rule, use_full)
        a_base = nu == b
        bl_trial.append(np.full(risk_idx.size, m, dtype=np.int64))
        bl_subject.append(risk_idx)
        bl_a.append(a_base[risk_idx])
        bl_r.append(r[risk_idx])
        bl_e.append(np.where(r[risk_idx], e[risk_idx].astype(float), np.nan))

        include = risk_idx[(r & e)[risk_idx]]
        n_follow = t_max - m  # periods available to trial m
        if include.size == 0 or n_follow <= 0:
            continue
        ev = event[include]
        cz = censor[include]
        sw = nu[include]
        a_inc = a_base[include]

        stop_event = np.where((ev >= b) & (ev - b < n_follow), ev - b + 1, _BIG)
        stop_censor = np.where((cz >= b) & (cz - b < n_follow), cz - b + 1, _BIG)
        if mode == "pp":
            switches = (~a_inc) & (sw > b)
            stop_switch = np.where(
                switches & (sw - b < n_follow), sw - b + 1, _BIG
            )
        else:
            stop_switch = np.full(include.size, _BIG)
        n_rows = np.minimum.reduce(
            [np.full(include.size, n_follow), stop_event, stop_censor, stop_switch]
        ).astype(np.int64)

        total = int(n_rows.sum())
        if total == 0:
            continue
        starts = np.concatenate([[0], np.cumsum(n_rows)[:-1]])
        subj_rep = np.repeat(include, n_rows)
        t = np.arange(total, dtype=np.int64) - np.repeat(starts, n_rows)
        month = b + t
        rows_trial.append(np.full(total, m, dtype=np.int64))
        rows_subject.append(subj_rep)
        rows_t.append(t)
        rows_y.append(event[subj_rep] == month)
        rows_a.append(np.repeat(a_inc, n_rows))
        control_rep = ~np.repeat(a_inc, n_rows)
        switched = (nu[subj_rep] >= 0) & (month >= nu[subj_rep])
        rows_n.append(control_rep & switched)
        rows_c.append(censor[subj_rep] == month)

    def cat(parts, dtype):
        if not parts:
            return np.empty(0, dtype=dtype)
        return np.concatenate(parts).astype(dtype)

    baseline_table = BaselineTable(
        trial=cat(bl_trial, np.int64),
        subject=cat(bl_subject, np.int64),
        a_base=cat(bl_a, bool),
        r=cat(bl_r, bool),
        e=cat(bl_e, float),
        cohort=cohort,
    )
    return PooledTable(
        trial=cat(rows_trial, np.int64),
        subject=cat(rows_subject, np.int64),
        period=cat(rows_t, np.int64),
        y=cat(rows_y, bool),
        a_base=cat(rows_a, bool),
        n=cat(rows_n, bool),
        c=cat(rows_c, bool),
        mode=mode,
        cohort=cohort,
        baseline_table=baseline_table,
    )


def pooled_size_closed_form(k: int, n_trials: int, t_max: int) -> int:
    """Exact pooled row count for a fully-followed cohort with no attrition."""
    twice = k * n_trials * (2 * t_max - (n_trials + 1))
    assert twice % 2 == 0
    return twice // 2


def lookback_sweep(
    cohort: Cohort,
    n_trials: int,
    rule: EligibilityRule,
    bmi_lookbacks,
    a1c_lookbacks,
    use_full: bool = False,
) -> pd.DataFrame:
    """Joint (eligibility, ascertainment) counts over a lookback grid.

    Returns one row per grid cell with subject-trial counts of
    (E=1, R=1), (E=0, R=1), and R=0 over the at-risk population.
    """
    if not len(bmi_lookbacks) or not len(a1c_lookbacks):
        raise ConfigError("lookback grids must be nonempty", path="lookbacks")
    event = cohort.event_month
    censor = cohort.censor_month
    nu = cohort.surgery_month
    records = []
    for lb_bmi in bmi_lookbacks:
        for lb_a1c in a1c_lookbacks:
            cell_rule = EligibilityRule(
                bmi_threshold=rule.bmi_threshold,
                a1c_threshold=rule.a1c_threshold,
                require_no_prior_surgery=rule.require_no_prior_surgery,
                bmi_lookback=int(lb_bmi),
                a1c_lookback=int(lb_a1c),
                treated_implies_eligible=rule.treated_implies_eligible,
            )
            counts = np.zeros(3, dtype=np.int64)  # e1r1, e0r1, r0
            for m in range(1, n_trials + 1):
                b = m - 1
                at_risk = (
                    ((event < 0) | (event >= b))
                    & ((censor < 0) | (censor >= b))
                    & ((nu < 0) | (nu >= b))
                )
                r, e = _ascertain_trial(cohort, b, cell_rule, use_full)
                counts[0] += int(np.sum(at_risk & r & e))
                counts[1] += int(np.sum(at_risk & r & ~e))
                counts[2] += int(np.sum(at_risk & ~r))
            records.append(
                {
                    "bmi_lookback": int(lb_bmi),
                    "a1c_lookback": int(lb_a1c),
                    "eligible_ascertained": counts[0],
                    "ineligible_ascertained": counts[1],
                    "unascertained": counts[2],
                }
            )
    return pd.DataFrame.from_records(records)
