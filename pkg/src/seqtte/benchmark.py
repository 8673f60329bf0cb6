"""Monte-Carlo harness: bias grids over weight specifications and
bootstrap-coverage checks.

Each replicate simulates a cohort, computes the full-data
adherence-weighted reference estimate, then re-analyzes the masked data
under every weight specification in the grid; cell bias is reported
against the across-replicate mean of the reference estimates. Replicates
parallelize across processes; all seeds derive from (study seed,
replicate index), so tables are reproducible regardless of scheduling.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .config import SimConfig
from .errors import SeqtteError
from .estimate import fit_msm, full_data_psi, replicate_seed
from .expansion import expand
from .inference import bootstrap, intervals
from .pipeline import (
    AnalysisConfig,
    adherence_spec_for,
    selection_spec,
    study_rule,
)
from .simulate import simulate_cohort
from .weights import combine_and_truncate, fit_adherence_weights, fit_selection_weights

UNSTRATIFIED_R_SPECS = ("none", "r_lra", "r_lry", "r_lr", "r_lr_a")
STRATIFIED_R_SPECS = ("r_lra", "r_lry", "r_lr")
N_SPECS = ("none", "n_la")


@dataclass(frozen=True)
class BiasCell:
    stratification: str  # "unstratified" | "stratified"
    r_model: str
    n_model: str

    @property
    def label(self) -> str:
        return f"{self.stratification}|{self.r_model}|{self.n_model}"


def bias_grid(study: str) -> list[BiasCell]:
    cells = [
        BiasCell("unstratified", r, n)
        for r in UNSTRATIFIED_R_SPECS
        for n in N_SPECS
    ]
    if study == "study2":
        cells += [
            BiasCell("stratified", r, n)
            for r in STRATIFIED_R_SPECS
            for n in N_SPECS
        ]
    return cells


def _analyze_replicate(
    config: SimConfig,
    rep: int,
    n_trials: int,
    truncation: float,
    baseline_hazard: str,
) -> dict:
    cohort = simulate_cohort(replace(config, seed=replicate_seed(config.seed, rep)))
    rule = study_rule(config.study)
    adherence = adherence_spec_for(config.mechanism, truncation)
    out: dict = {"rep": rep, "cells": {}, "errors": {}}
    out["psi_full"] = full_data_psi(
        cohort, rule, n_trials, adherence, baseline_hazard, truncation
    )

    pooled = expand(cohort, n_trials, rule, mode="pp")
    w_n = fit_adherence_weights(pooled, adherence)
    for cell in bias_grid(config.study):
        try:
            components = {}
            if cell.r_model != "none":
                spec = selection_spec(
                    config.mechanism,
                    cell.r_model,
                    stratified=cell.stratification == "stratified",
                    truncation=truncation,
                )
                components["R"] = fit_selection_weights(pooled, spec)
            if cell.n_model == "n_la":
                components["N"] = w_n
            weights = (
                combine_and_truncate(components, truncation)
                if components
                else None
            )
            fit = fit_msm(pooled, weights, estimand="pp",
                          baseline_hazard=baseline_hazard)
            out["cells"][cell.label] = fit.psi_hat
        except SeqtteError as exc:
            out["cells"][cell.label] = np.nan
            out["errors"][cell.label] = str(exc)
    return out


_BIAS_STATE: dict = {}


def _init_bias_worker(config, n_trials, truncation, baseline_hazard):
    _BIAS_STATE.update(
        config=config,
        n_trials=n_trials,
        truncation=truncation,
        baseline_hazard=baseline_hazard,
    )


def _run_bias_replicate(rep: int) -> dict:
    return _analyze_replicate(
        _BIAS_STATE["config"],
        rep,
        _BIAS_STATE["n_trials"],
        _BIAS_STATE["truncation"],
        _BIAS_STATE["baseline_hazard"],
    )


@dataclass
class BiasStudyResult:
    study: str
    mechanism: str
    psi_pp: float
    replicates: int
    table: pd.DataFrame
    errors: dict[str, int]

    def to_markdown(self) -> str:
        lines = [
            f"Bias study: {self.study}, mechanism {self.mechanism}, "
            f"{self.replicates} replicates, reference effect "
            f"{self.psi_pp:.4f}",
            "",
            "| Stratification | Selection model | Adherence model | "
            "Mean bias | Mean % bias | Median bias | Median % bias | MC SE |",
            "|---|---|---|---|---|---|---|---|",
        ]
        for row in self.table.itertuples(index=False):
            lines.append(
                f"| {row.stratification} | {row.r_model} | {row.n_model} | "
                f"{row.mean_bias:+.3f} | {row.pct_mean_bias:+.1f} | "
                f"{row.median_bias:+.3f} | {row.pct_median_bias:+.1f} | "
                f"{row.mc_se:.3f} |"
            )
        return "\n".join(lines) + "\n"


def run_bias_study(
    config: SimConfig,
    replicates: int,
    n_trials: int = 12,
    truncation: float = 0.99,
    baseline_hazard: str = "per_trial_saturated",
    n_jobs: int = 1,
) -> BiasStudyResult:
    """Bias of the treatment-effect estimate under each weight spec."""
    if n_jobs <= 1:
        _init_bias_worker(config, n_trials, truncation, baseline_hazard)
        results = [_run_bias_replicate(rep) for rep in range(replicates)]
    else:
        with ProcessPoolExecutor(
            max_workers=n_jobs,
            initializer=_init_bias_worker,
            initargs=(config, n_trials, truncation, baseline_hazard),
        ) as pool:
            results = list(pool.map(_run_bias_replicate, range(replicates)))

    psi_full = np.array([r["psi_full"] for r in results])
    psi_pp = float(np.mean(psi_full))
    records = []
    error_counts: dict[str, int] = {}
    for cell in bias_grid(config.study):
        values = np.array([r["cells"].get(cell.label, np.nan) for r in results])
        ok = np.isfinite(values)
        n_failed = int((~ok).sum())
        if n_failed:
            error_counts[cell.label] = n_failed
        bias = values[ok] - psi_pp
        denom = psi_pp if psi_pp != 0 else np.nan
        records.append(
            {
                "stratification": cell.stratification,
                "r_model": cell.r_model,
                "n_model": cell.n_model,
                "n_ok": int(ok.sum()),
                "n_failed": n_failed,
                "mean_psi": float(values[ok].mean()) if ok.any() else np.nan,
                "mean_bias": float(bias.mean()) if ok.any() else np.nan,
                "pct_mean_bias": float(100 * bias.mean() / denom)
                if ok.any()
                else np.nan,
                "median_bias": float(np.median(bias)) if ok.any() else np.nan,
                "pct_median_bias": float(100 * np.median(bias) / denom)
                if ok.any()
                else np.nan,
                "mc_se": float(bias.std(ddof=1) / np.sqrt(ok.sum()))
                if ok.sum() > 1
                else np.nan,
            }
        )
    table = pd.DataFrame.from_records(records)
    return BiasStudyResult(
        study=config.study,
        mechanism=config.mechanism,
        psi_pp=psi_pp,
        replicates=replicates,
        table=table,
        errors=error_counts,
    )


# -- coverage -----------------------------------------------------------------


def _coverage_sim(
    config: SimConfig,
    sim_index: int,
    n_trials: int,
    n_boot: int,
    truncation: float,
    baseline_hazard: str,
    level: float,
) -> dict:
    sim_seed = replicate_seed(config.seed, 2 * sim_index)
    boot_seed = replicate_seed(config.seed, 2 * sim_index + 1)
    cohort = simulate_cohort(replace(config, seed=sim_seed))
    rule = study_rule(config.study)
    analysis = AnalysisConfig(
        rule=rule,
        n_trials=n_trials,
        estimand="pp",
        selection=selection_spec(config.mechanism, "r_lr", truncation=truncation),
        adherence=adherence_spec_for(config.mechanism, truncation),
        truncation_quantile=truncation,
        baseline_hazard=baseline_hazard,
    )
    from .pipeline import analyze

    psi_hat = analyze(cohort, analysis).psi_hat
    boot = bootstrap(cohort, analysis, n_boot, seed=boot_seed, n_jobs=1)
    ivs = intervals(boot.estimates, psi_hat, level=level)
    psi_full = full_data_psi(
        cohort,
        rule,
        n_trials,
        adherence_spec_for(config.mechanism, truncation),
        baseline_hazard,
        truncation,
    )
    return {
        "sim": sim_index,
        "psi_hat": psi_hat,
        "psi_full": psi_full,
        "intervals": ivs,
        "n_boot_failed": boot.n_failed,
    }


_COV_STATE: dict = {}


def _init_cov_worker(config, n_trials, n_boot, truncation, baseline_hazard, level):
    _COV_STATE.update(
        config=config,
        n_trials=n_trials,
        n_boot=n_boot,
        truncation=truncation,
        baseline_hazard=baseline_hazard,
        level=level,
    )


def _run_cov_sim(index: int) -> dict:
    return _coverage_sim(
        _COV_STATE["config"],
        index,
        _COV_STATE["n_trials"],
        _COV_STATE["n_boot"],
        _COV_STATE["truncation"],
        _COV_STATE["baseline_hazard"],
        _COV_STATE["level"],
    )


@dataclass
class CoverageStudyResult:
    mechanism: str
    study: str
    psi_pp: float
    n_sims: int
    n_boot: int
    level: float
    coverage: dict[str, float]
    table: pd.DataFrame


def run_coverage_study(
    config: SimConfig,
    n_sims: int,
    n_boot: int,
    n_trials: int = 12,
    truncation: float = 0.99,
    baseline_hazard: str = "per_trial_saturated",
    level: float = 0.95,
    n_jobs: int = 1,
) -> CoverageStudyResult:
    """Fraction of simulations whose bootstrap intervals cover the
    reference effect, per interval method."""
    if n_jobs <= 1:
        _init_cov_worker(config, n_trials, n_boot, truncation,
                         baseline_hazard, level)
        results = [_run_cov_sim(i) for i in range(n_sims)]
    else:
        with ProcessPoolExecutor(
            max_workers=n_jobs,
            initializer=_init_cov_worker,
            initargs=(config, n_trials, n_boot, truncation,
                      baseline_hazard, level),
        ) as pool:
            results = list(pool.map(_run_cov_sim, range(n_sims)))

    psi_pp = float(np.mean([r["psi_full"] for r in results]))
    rows = []
    for r in results:
        row = {
            "sim": r["sim"],
            "psi_hat": r["psi_hat"],
            "psi_full": r["psi_full"],
            "n_boot_failed": r["n_boot_failed"],
        }
        for method, (lo, hi) in r["intervals"].items():
            row[f"{method}_lo"] = lo
            row[f"{method}_hi"] = hi
            row[f"{method}_covers"] = bool(lo <= psi_pp <= hi)
        rows.append(row)
    table = pd.DataFrame.from_records(rows)
    coverage = {
        method: float(table[f"{method}_covers"].mean())
        for method in ("normal", "pivotal", "percentile")
    }
    return CoverageStudyResult(
        mechanism=config.mechanism,
        study=config.study,
        psi_pp=psi_pp,
        n_sims=n_sims,
        n_boot=n_boot,
        level=level,
        coverage=coverage,
        table=table,
    )
