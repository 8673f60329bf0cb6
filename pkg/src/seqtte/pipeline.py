"""End-to-end analysis of one cohort: expand, fit weights, estimate.

``AnalysisConfig`` captures everything downstream of the data: the
eligibility rule, trial count, estimand, which component weight models to
fit, and the outcome-model layout. It is the unit the bootstrap resamples
under and the benchmark sweeps over.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cohort import Cohort
from .config import mechanism_covariates
from .domain import EligibilityRule
from .errors import ConfigError
from .estimate import MsmFit, fit_msm
from .expansion import PooledTable, expand
from .weights import (
    ComponentWeights,
    WeightModelSpec,
    WeightSet,
    combine_and_truncate,
    fit_adherence_weights,
    fit_censoring_weights,
    fit_selection_weights,
    fit_treatment_weights,
)


@dataclass(frozen=True)
class AnalysisConfig:
    rule: EligibilityRule
    n_trials: int
    estimand: str = "pp"
    selection: WeightModelSpec | None = None
    adherence: WeightModelSpec | None = None
    treatment: WeightModelSpec | None = None
    censoring: WeightModelSpec | None = None
    truncation_quantile: float = 0.99
    baseline_hazard: str = "per_trial_saturated"
    stabilized: bool = False

    def __post_init__(self):
        if self.estimand.lower() not in ("pp", "itt"):
            raise ConfigError("estimand must be 'pp' or 'itt'", path="estimand")
        object.__setattr__(self, "estimand", self.estimand.lower())

    def components(self) -> dict[str, WeightModelSpec]:
        out = {}
        for key, spec in (
            ("A", self.treatment),
            ("C", self.censoring),
            ("N", self.adherence),
            ("R", self.selection),
        ):
            if spec is not None:
                out[key] = spec
        return out


_FITTERS = {
    "A": fit_treatment_weights,
    "C": fit_censoring_weights,
    "N": fit_adherence_weights,
    "R": fit_selection_weights,
}


def fit_weights(pooled: PooledTable, analysis: AnalysisConfig) -> WeightSet:
    components: dict[str, ComponentWeights] = {}
    for key, spec in analysis.components().items():
        if analysis.stabilized and not spec.stabilized:
            spec = replace(spec, stabilized=True)
        components[key] = _FITTERS[key](pooled, spec)
    if not components:
        n = pooled.n_rows
        ones = np.ones(n)
        return combine_and_truncate({"A": ones}, 1.0)
    return combine_and_truncate(
        components, analysis.truncation_quantile, stabilized=analysis.stabilized
    )


def analyze(cohort: Cohort, analysis: AnalysisConfig) -> MsmFit:
    """Expand the cohort, fit the configured weights, fit the outcome model."""
    pooled = expand(cohort, analysis.n_trials, analysis.rule,
                    mode=analysis.estimand)
    weight_set = fit_weights(pooled, analysis)
    return fit_msm(
        pooled,
        weight_set,
        estimand=analysis.estimand,
        baseline_hazard=analysis.baseline_hazard,
    )


# -- weight-model builders for the simulation studies -------------------------


def selection_spec(
    mechanism: str,
    which: str,
    stratified: bool = False,
    truncation: float = 0.99,
) -> WeightModelSpec | None:
    """Named selection-model specifications used across the bias grids.

    ``which`` is one of ``none``, ``r_lra``, ``r_lry``, ``r_lr``,
    ``r_lr_a`` (the full set plus baseline treatment as a covariate).
    """
    if which == "none":
        return None
    sets = mechanism_covariates(mechanism)
    if which == "r_lra":
        cov = list(sets["l_ra"])
    elif which == "r_lry":
        cov = list(sets["l_ry"])
    elif which == "r_lr":
        cov = list(sets["l_r"])
    elif which == "r_lr_a":
        if stratified:
            raise ConfigError(
                "treatment-stratified fits cannot also include treatment",
                path="weights",
            )
        cov = list(sets["l_r"]) + ["surgery"]
    else:
        raise ConfigError(f"unknown selection spec {which!r}", path="weights")
    return WeightModelSpec(
        target="R",
        covariates=tuple(cov),
        stratify_by_treatment=stratified,
        truncation_quantile=truncation,
    )


def adherence_spec_for(mechanism: str, truncation: float = 0.99) -> WeightModelSpec:
    return WeightModelSpec(
        target="N",
        covariates=tuple(mechanism_covariates(mechanism)["l_a"]),
        truncation_quantile=truncation,
    )


def study_rule(study: str) -> EligibilityRule:
    """Eligibility rules of the two hypothetical study designs."""
    if study == "study1":
        return EligibilityRule(
            bmi_threshold=35.0,
            a1c_threshold=5.7,
            require_no_prior_surgery=True,
            bmi_lookback=1,
            a1c_lookback=1,
            treated_implies_eligible=True,
        )
    if study == "study2":
        return EligibilityRule(
            bmi_threshold=35.0,
            a1c_threshold=None,
            require_no_prior_surgery=True,
            bmi_lookback=1,
            a1c_lookback=1,
            treated_implies_eligible=True,
        )
    raise ConfigError(f"unknown study {study!r}", path="study")
