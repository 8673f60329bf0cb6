"""Component inverse-probability weights.

Four families: treatment (confounding), censoring, non-adherence, and
selection (missing-eligibility ascertainment). Subject-trial-level
weights (treatment, selection) are fit on the at-risk baseline table and
broadcast to person-time rows; period-level weights (censoring,
non-adherence) are cumulative products of per-period retention
probabilities. Each component can be stabilized and is truncated at its
own empirical quantile before the product weight is formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import ELIGIBILITY_COLUMNS
from .errors import ConfigError, DataError, PositivityError
from .expansion import BaselineTable, PooledTable
from .glm import GlmFit, expit, fit_logistic

POSITIVITY_FLOOR = 1e-6
POSITIVITY_WARN = 1e-2
COMPONENTS = ("A", "C", "N", "R")


@dataclass(frozen=True)
class WeightModelSpec:
    """Specification of one component weight model."""

    target: str
    covariates: tuple[str, ...] = ()
    stabilized: bool = False
    stratify_by_treatment: bool = False
    truncation_quantile: float = 0.99
    numerator_includes_treatment: bool = True

    def __post_init__(self):
        if self.target not in COMPONENTS:
            raise ConfigError(f"target must be one of {COMPONENTS}",
                              path="weights.target")
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.target == "R":
            leaked = set(self.covariates) & ELIGIBILITY_COLUMNS
            if leaked:
                raise ConfigError(
                    "selection model may not condition on eligibility-defining "
                    f"columns {sorted(leaked)}",
                    path="weights.covariates",
                )
        if self.stratify_by_treatment and self.target != "R":
            raise ConfigError(
                "stratified fitting is defined for the selection model only",
                path="weights.stratify_by_treatment",
            )
        if not 0.5 < self.truncation_quantile <= 1.0:
            raise ConfigError("truncation_quantile must be in (0.5, 1]",
                              path="weights.truncation_quantile")


@dataclass
class ComponentWeights:
    target: str
    pooled: np.ndarray  # aligned to pooled rows
    baseline: np.ndarray | None  # aligned to baseline-table rows where defined
    diagnostics: dict
    fits: dict[str, dict]

    def check_positive(self):
        if np.any(~np.isfinite(self.pooled)) or np.any(self.pooled <= 0):
            raise DataError(f"W^{self.target} contains nonpositive values")


@dataclass
class WeightSet:
    """Per-row component and product weights for one pooled table."""

    w_a: np.ndarray
    w_c: np.ndarray
    w_n: np.ndarray
    w_r: np.ndarray
    stabilized: bool
    truncation_quantile: float
    w_total: np.ndarray
    truncation_report: dict
    diagnostics: dict = field(default_factory=dict)


def _design(table, covariates, n_rows) -> tuple[np.ndarray, list[str]]:
    columns = [np.ones(n_rows)]
    names = ["intercept"]
    for name in covariates:
        col = np.asarray(table.column(name), dtype=float)
        if np.any(~np.isfinite(col)):
            raise DataError(
                f"covariate {name!r} has missing values on the model rows"
            )
        columns.append(col)
        names.append(name)
    return np.column_stack(columns), names


def _positivity(target: str, probs: np.ndarray, diagnostics: dict):
    n_warn = int(np.sum(probs < POSITIVITY_WARN))
    diagnostics["min_fitted_prob"] = float(probs.min()) if probs.size else 1.0
    diagnostics["n_below_warn"] = n_warn
    if probs.size and probs.min() < POSITIVITY_FLOOR:
        raise PositivityError(
            target,
            float(probs.min()),
            int(np.sum(probs < POSITIVITY_FLOOR)),
            POSITIVITY_FLOOR,
        )


def _baseline_to_pooled(pooled: PooledTable, baseline_values: np.ndarray):
    """Broadcast per-subject-trial values onto their person-time rows."""
    table = pooled.baseline_table
    k = pooled.cohort.n_subjects
    keys_baseline = table.trial * k + table.subject
    keys_pooled = pooled.trial * k + pooled.subject
    pos = np.searchsorted(keys_baseline, keys_pooled)
    if pos.size and (
        np.any(pos >= keys_baseline.size)
        or np.any(keys_baseline[pos] != keys_pooled)
    ):
        raise DataError("pooled rows reference unknown subject-trials")
    return baseline_values[pos]


def _summary(values: np.ndarray) -> dict:
    if values.size == 0:
        return {"n": 0}
    qs = np.quantile(values, [0.0, 0.01, 0.5, 0.99, 1.0])
    return {
        "n": int(values.size),
        "mean": float(values.mean()),
        "min": float(qs[0]),
        "q01": float(qs[1]),
        "median": float(qs[2]),
        "q99": float(qs[3]),
        "max": float(qs[4]),
    }


# -- subject-trial-level components -----------------------------------------


def fit_selection_weights(pooled: PooledTable, spec: WeightModelSpec):
    """Inverse probability of eligibility ascertainment, per subject-trial.

    The model is fit on every at-risk baseline row (ascertained or not);
    weights apply to ascertained rows. With treatment-stratified fitting a
    stratum that is fully ascertained gets identity weights by convention.
    """
    if spec.target != "R":
        raise ConfigError("spec.target must be 'R'", path="weights.target")
    table = pooled.baseline_table
    n = table.n_rows
    y = table.r.astype(float)
    diagnostics: dict = {"target": "R", "stratified": spec.stratify_by_treatment}
    fits: dict = {}
    prob = np.full(n, np.nan)
    numer = np.ones(n)

    if spec.stratify_by_treatment:
        for arm in (0, 1):
            mask = table.a_base == bool(arm)
            label = f"a{arm}"
            if not np.any(mask):
                continue
            if np.all(table.r[mask]):
                # fully-ascertained stratum: correct weights are identically 1
                prob[mask] = 1.0
                diagnostics[f"degenerate_stratum_{label}"] = True
                continue
            design, names = _design(_Subset(table, mask), spec.covariates,
                                    int(mask.sum()))
            fit = fit_logistic(design, y[mask], column_names=names)
            fits[f"denominator_{label}"] = fit.to_dict()
            prob[mask] = expit(design @ fit.coefficients)
            numer[mask] = float(y[mask].mean())
    else:
        design, names = _design(table, spec.covariates, n)
        fit = fit_logistic(design, y, column_names=names)
        fits["denominator"] = fit.to_dict()
        prob = expit(design @ fit.coefficients)
        if spec.stabilized:
            if spec.numerator_includes_treatment:
                num_design = np.column_stack(
                    [np.ones(n), table.a_base.astype(float)]
                )
                num_fit = fit_logistic(num_design, y,
                                       column_names=["intercept", "surgery"])
                fits["numerator"] = num_fit.to_dict()
                numer = expit(num_design @ num_fit.coefficients)
            else:
                numer = np.full(n, float(y.mean()))

    applied = table.r
    prob_applied = np.clip(prob[applied], 1e-12, 1.0)
    _positivity("R", prob_applied, diagnostics)
    baseline_weights = np.full(n, np.nan)
    baseline_weights[applied] = (
        numer[applied] / prob[applied] if spec.stabilized else 1.0 / prob[applied]
    )
    pooled_weights = _baseline_to_pooled(pooled, baseline_weights)
    diagnostics["weights"] = _summary(baseline_weights[applied])
    out = ComponentWeights("R", pooled_weights, baseline_weights, diagnostics, fits)
    out.check_positive()
    return out


def fit_treatment_weights(pooled: PooledTable, spec: WeightModelSpec):
    """Inverse probability of observed baseline treatment, per subject-trial."""
    if spec.target != "A":
        raise ConfigError("spec.target must be 'A'", path="weights.target")
    table = pooled.baseline_table
    included = table.included()
    idx = np.nonzero(included)[0]
    subset = _Subset(table, included)
    y = table.a_base[included].astype(float)
    design, names = _design(subset, spec.covariates, idx.size)
    fit = fit_logistic(design, y, column_names=names)
    p_treat = expit(design @ fit.coefficients)
    p_observed = np.where(y == 1, p_treat, 1.0 - p_treat)
    diagnostics: dict = {"target": "A"}
    _positivity("A", p_observed, diagnostics)
    weights = 1.0 / p_observed
    fits = {"denominator": fit.to_dict()}
    if spec.stabilized:
        marginal = float(y.mean())
        weights = np.where(y == 1, marginal, 1.0 - marginal) * weights
        fits["numerator"] = {"marginal_p_treat": marginal}
    baseline_weights = np.full(table.n_rows, np.nan)
    baseline_weights[idx] = weights
    pooled_weights = _baseline_to_pooled(pooled, baseline_weights)
    diagnostics["weights"] = _summary(weights)
    out = ComponentWeights("A", pooled_weights, baseline_weights, diagnostics, fits)
    out.check_positive()
    return out


class _Subset:
    """Column view over a masked subset of a baseline table."""

    def __init__(self, table: BaselineTable, mask: np.ndarray):
        self._table = table
        self._mask = mask

    def column(self, name: str) -> np.ndarray:
        return self._table.column(name)[self._mask]


# -- period-level cumulative components --------------------------------------


def _grouped_cumsum(values: np.ndarray, group_key: np.ndarray) -> np.ndarray:
    """Cumulative sum within consecutive equal-key groups."""
    if values.size == 0:
        return values.copy()
    total = np.cumsum(values)
    new_group = np.empty(values.size, dtype=bool)
    new_group[0] = True
    new_group[1:] = group_key[1:] != group_key[:-1]
    starts = np.nonzero(new_group)[0]
    base = np.where(starts > 0, total[starts - 1], 0.0)
    offset = np.repeat(base, np.diff(np.append(starts, values.size)))
    return total - offset


def _cumulative_hazard_weights(
    pooled: PooledTable,
    spec: WeightModelSpec,
    event_col: np.ndarray,
    at_risk: np.ndarray,
    target: str,
):
    """Shared machinery for W^C / W^N cumulative products."""
    n = pooled.n_rows
    diagnostics: dict = {"target": target}
    fits: dict = {}
    weights = np.ones(n)
    idx = np.nonzero(at_risk)[0]
    y = event_col[at_risk].astype(float)
    if idx.size == 0 or y.sum() == 0:
        # degenerate hazard: no events of this kind, identity weights
        diagnostics["degenerate_no_events"] = True
        diagnostics["weights"] = _summary(weights)
        return ComponentWeights(target, weights, None, diagnostics, fits)

    subset = _RowSubset(pooled, at_risk)
    design, names = _design(subset, spec.covariates, idx.size)
    fit = fit_logistic(design, y, column_names=names)
    fits["denominator"] = fit.to_dict()
    p_event = expit(design @ fit.coefficients)
    p_stay = 1.0 - p_event
    _positivity(target, p_stay, diagnostics)

    key = pooled.trial[at_risk] * pooled.cohort.n_subjects + pooled.subject[at_risk]
    log_stay = _grouped_cumsum(np.log(p_stay), key)
    w = np.exp(-log_stay)
    if spec.stabilized:
        num_fit = fit_logistic(
            np.ones((idx.size, 1)), y, column_names=["intercept"]
        )
        fits["numerator"] = num_fit.to_dict()
        p_stay_num = 1.0 - expit(np.full(idx.size, num_fit.coefficients[0]))
        w = w * np.exp(_grouped_cumsum(np.log(p_stay_num), key))
    weights[idx] = w
    diagnostics["weights"] = _summary(w)
    out = ComponentWeights(target, weights, None, diagnostics, fits)
    out.check_positive()
    return out


class _RowSubset:
    def __init__(self, pooled: PooledTable, mask: np.ndarray):
        self._pooled = pooled
        self._mask = mask

    def column(self, name: str) -> np.ndarray:
        return self._pooled.column(name)[self._mask]


def fit_adherence_weights(pooled: PooledTable, spec: WeightModelSpec):
    """Cumulative inverse probability of remaining adherent.

    One-sided: initiators are structurally adherent and keep weight 1;
    control person-time up to and including the first switch row feeds the
    hazard model.
    """
    if spec.target != "N":
        raise ConfigError("spec.target must be 'N'", path="weights.target")
    nu = pooled.cohort.surgery_month[pooled.subject]
    month = pooled.month
    not_yet_switched = (nu < 0) | (month <= nu)
    at_risk = (~pooled.a_base) & not_yet_switched & (~pooled.c)
    return _cumulative_hazard_weights(pooled, spec, pooled.n, at_risk, "N")


def fit_censoring_weights(pooled: PooledTable, spec: WeightModelSpec):
    """Cumulative inverse probability of remaining uncensored."""
    if spec.target != "C":
        raise ConfigError("spec.target must be 'C'", path="weights.target")
    at_risk = np.ones(pooled.n_rows, dtype=bool)
    return _cumulative_hazard_weights(pooled, spec, pooled.c, at_risk, "C")


# -- combination --------------------------------------------------------------


def combine_and_truncate(
    components: dict[str, ComponentWeights | np.ndarray],
    quantile: float,
    stabilized: bool = False,
) -> WeightSet:
    """Truncate each component at its empirical quantile, then multiply."""
    if not 0.5 < quantile <= 1.0:
        raise ConfigError("truncation quantile must be in (0.5, 1]",
                          path="weights.truncation_quantile")
    arrays: dict[str, np.ndarray] = {}
    diagnostics: dict = {}
    n = None
    for name, comp in components.items():
        if name not in COMPONENTS:
            raise ConfigError(f"unknown component {name!r}", path="weights")
        values = comp.pooled if isinstance(comp, ComponentWeights) else np.asarray(
            comp, dtype=float
        )
        if isinstance(comp, ComponentWeights):
            diagnostics[name] = comp.diagnostics
        if n is None:
            n = values.size
        elif values.size != n:
            raise DataError("component weight vectors have mismatched lengths")
        if np.any(~np.isfinite(values)) or np.any(values <= 0):
            raise DataError(f"component W^{name} has nonpositive entries")
        arrays[name] = values
    if n is None:
        raise DataError("no components supplied")

    report: dict = {"quantile": quantile, "components": {}}
    total = np.ones(n)
    for name in COMPONENTS:
        if name not in arrays:
            continue
        values = arrays[name]
        if quantile < 1.0:
            cap = float(np.quantile(values, quantile))
            capped = np.minimum(values, cap)
            n_capped = int(np.sum(values > cap))
            mass = float(np.sum(values - capped))
        else:
            cap, capped, n_capped, mass = float("inf"), values, 0, 0.0
        report["components"][name] = {
            "cap": cap,
            "n_capped": n_capped,
            "mass_removed": mass,
        }
        arrays[name] = capped
        total = total * capped

    ones = np.ones(n)
    return WeightSet(
        w_a=arrays.get("A", ones.copy()),
        w_c=arrays.get("C", ones.copy()),
        w_n=arrays.get("N", ones.copy()),
        w_r=arrays.get("R", ones.copy()),
        stabilized=stabilized,
        truncation_quantile=quantile,
        w_total=total,
        truncation_report=report,
        diagnostics=diagnostics,
    )
