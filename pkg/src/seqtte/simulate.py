"""Longitudinal cohort generator.

Generation runs in stages, each on its own RNG stream derived from the
config seed: baseline covariates, pre-surgery trajectories, surgery
uptake, latent post-surgical classes, post-surgery trajectories, monthly
outcomes, and monthly measurement ascertainment. Stage isolation keeps a
change to one model block (e.g. the ascertainment coefficients) from
perturbing draws in the others, and identical configs regenerate
byte-identical cohorts.

Months run ``0 .. t_max - 1``. After a subject's event month nothing is
emitted; months whose ascertainment indicator is 0 have both measurement
values masked in the observed series (the pre-masking truth is kept on
the cohort for oracle analyses).
"""

from __future__ import annotations

import numpy as np

from .cohort import Cohort
from .config import SimConfig
from .domain import BASELINE_COLUMNS
from .errors import ConfigError
from .glm import expit

_BIDX = {name: i for i, name in enumerate(BASELINE_COLUMNS)}
STAGES = (
    "baseline",
    "trajectory",
    "treatment",
    "classes",
    "postsurgery",
    "outcome",
    "missingness",
)


def rng_streams(seed: int, names=STAGES) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def linear_predictor(coefs: dict[str, float], columns: dict[str, np.ndarray]):
    """intercept + sum(coef * column); ``a:b`` keys multiply two columns."""
    out = None
    for key, value in coefs.items():
        if key == "intercept":
            term = value
        else:
            col = None
            for part in key.split(":"):
                piece = columns[part]
                col = piece if col is None else col * piece
            term = value * col
        out = term if out is None else out + term
    if out is None:
        return 0.0
    return out


def _baseline_columns(baseline: np.ndarray, matrix_shape=False) -> dict:
    cols = {name: baseline[:, i] for name, i in _BIDX.items()}
    if matrix_shape:
        cols = {name: col[:, None] for name, col in cols.items()}
    return cols


def sample_baseline(config: SimConfig, rng: np.random.Generator, n: int):
    """Draw ``n`` baseline covariate rows in BASELINE_COLUMNS order."""
    draws = config.baseline_sampler.sample(rng, n)
    smoking = draws["smoking"].astype(int)
    matrix = np.column_stack(
        [
            draws["gender"],
            draws["race"],
            draws["site"],
            (smoking == 1).astype(float),
            (smoking == 2).astype(float),
            draws["insulin"],
            draws["elix_score"],
            draws["bmi0"],
            draws["a1c0"],
        ]
    )
    if np.any(matrix[:, _BIDX["bmi0"]] <= 0) or np.any(matrix[:, _BIDX["a1c0"]] <= 0):
        raise ConfigError(
            "bmi0/a1c0 marginals must have positive support",
            path="baseline_sampler.marginals",
        )
    return matrix


def simulate_presurgery_trajectory(baseline, config: SimConfig, rng):
    """Relative-drift trajectories in the absence of surgery.

    Returns ``(bmi, a1c, quadratic_class, random_effects)`` where the
    series are ``(n, t_max)`` matrices anchored at bmi0/a1c0.
    """
    coef = config.coefficients
    n = baseline.shape[0]
    t_max = config.t_max
    cols = _baseline_columns(baseline)
    tau = coef.tau2
    g1 = rng.normal(0.0, np.sqrt(tau[0]), n)
    g2 = rng.normal(0.0, np.sqrt(tau[1]), n)
    g3 = rng.normal(0.0, np.sqrt(tau[2]), n)
    eps_bmi = rng.standard_normal((n, t_max)) * np.sqrt(coef.sigma2_bmi)
    a1c0 = cols["a1c0"]
    eps_a1c = rng.standard_normal((n, t_max)) * (
        np.sqrt(coef.a1c_noise_scale) * a1c0[:, None]
    )
    q = rng.random(n) < expit(linear_predictor(coef.delta, cols) + np.zeros(n))

    t = np.arange(t_max, dtype=float)
    slope_b = linear_predictor(coef.beta1, cols) + g1
    quad_b = linear_predictor(coef.beta2, cols) + g2
    slope_a = linear_predictor(coef.beta3, cols) + g3
    rel_bmi = 1.0 + slope_b[:, None] * t + (q * quad_b)[:, None] * t**2 + eps_bmi
    rel_a1c = 1.0 + slope_a[:, None] * t + eps_a1c
    floor = config.trajectory_floor
    bmi = cols["bmi0"][:, None] * np.maximum(rel_bmi, floor)
    a1c = a1c0[:, None] * np.maximum(rel_a1c, floor)
    effects = {"gamma1": g1, "gamma2": g2, "gamma3": g3}
    return bmi, a1c, q, effects


def _uptake_probability(baseline, bmi_t, a1c_t, config):
    cols = _baseline_columns(baseline)
    cols["bmi"] = bmi_t
    cols["hgba1c"] = a1c_t
    return expit(linear_predictor(config.coefficients.alpha, cols))


def _type_probability(baseline, bmi_t, a1c_t, config):
    cols = _baseline_columns(baseline)
    cols["bmi"] = bmi_t
    cols["hgba1c"] = a1c_t
    return expit(linear_predictor(config.coefficients.pi, cols))


def sample_treatment(baseline, bmi_t, a1c_t, config: SimConfig, rng):
    """One month of surgery-uptake draws for currently untreated subjects.

    All supplied subjects must satisfy the clinical BMI gate; initiators
    also receive a surgery-type draw (1 = gastric bypass).
    """
    bmi_t = np.asarray(bmi_t, dtype=float)
    if np.any(bmi_t < config.treatment_gate_bmi):
        raise ConfigError(
            f"treatment model conditions on BMI >= {config.treatment_gate_bmi}; "
            "filter candidates first",
            path="treatment_gate_bmi",
        )
    p = _uptake_probability(baseline, bmi_t, a1c_t, config)
    initiated = rng.random(bmi_t.shape[0]) < p
    p_type = _type_probability(baseline, bmi_t, a1c_t, config)
    rygb_draw = rng.random(bmi_t.shape[0]) < p_type
    rygb = np.where(initiated, rygb_draw.astype(int), -1)
    return initiated.astype(int), rygb


def _treatment_schedule(baseline, bmi_pre, a1c_pre, config, rng):
    n, t_max = bmi_pre.shape
    u = rng.random((n, t_max))
    u_type = rng.random(n)
    cols_matrix = _baseline_columns(baseline, matrix_shape=True)
    cols_matrix["bmi"] = bmi_pre
    cols_matrix["hgba1c"] = a1c_pre
    prob = expit(linear_predictor(config.coefficients.alpha, cols_matrix))
    candidate = (u < prob) & (bmi_pre >= config.treatment_gate_bmi)
    any_hit = candidate.any(axis=1)
    nu = np.where(any_hit, candidate.argmax(axis=1), -1)
    rows = np.nonzero(any_hit)[0]
    rygb = np.full(n, -1, dtype=np.int64)
    if rows.size:
        p_type = _type_probability(
            baseline[rows], bmi_pre[rows, nu[rows]], a1c_pre[rows, nu[rows]], config
        )
        rygb[rows] = (u_type[rows] < p_type).astype(int)
    return nu, rygb


def ordinal_class(cuts, shift, u) -> np.ndarray:
    """Cumulative-logit draw: P(class <= j) = expit(cut_j + shift)."""
    cum = expit(np.asarray(cuts, dtype=float)[None, :] + np.asarray(shift)[:, None])
    return 1 + (np.asarray(u)[:, None] > cum).sum(axis=1)


def sample_latent_classes(baseline, bmi_nu, a1c_nu, rygb, config: SimConfig, rng):
    """Latent post-surgical trajectory classes for subjects treated now."""
    coef = config.coefficients
    cols = _baseline_columns(baseline)
    cols["bmi"] = np.asarray(bmi_nu, dtype=float)
    cols["hgba1c"] = np.asarray(a1c_nu, dtype=float)
    cols["bs_type_rygb"] = np.asarray(rygb, dtype=float)
    n = baseline.shape[0]
    shift_eta = linear_predictor(coef.lambda_terms, cols) + np.zeros(n)
    shift_xi = linear_predictor(coef.phi_terms, cols) + np.zeros(n)
    eta = ordinal_class(coef.lambda_cuts, shift_eta, rng.random(n))
    xi = ordinal_class(coef.phi_cuts, shift_xi, rng.random(n))
    return eta, xi


def simulate_postsurgery_trajectory(
    bmi_anchor, a1c_anchor, a1c0, nu, eta, xi, config: SimConfig, rng
):
    """Post-surgery series for months after each subject's surgery month.

    Returns ``(bmi, a1c, effects)`` as ``(n, t_max)`` matrices that are NaN
    at months ``<= nu`` (the pre-surgery span) and filled afterwards.
    """
    coef = config.coefficients
    n = len(nu)
    t_max = config.t_max
    g4 = rng.normal(0.0, np.sqrt(coef.tau2[3]), n)
    g5 = rng.normal(0.0, np.sqrt(coef.tau2[4]), n)
    eps_b = rng.standard_normal((n, t_max)) * np.sqrt(coef.sigma2_bmi)
    eps_a = rng.standard_normal((n, t_max)) * (
        np.sqrt(coef.a1c_noise_scale) * np.asarray(a1c0)[:, None]
    )
    out_b = np.full((n, t_max), np.nan)
    out_a = np.full((n, t_max), np.nan)
    if n == 0:
        return out_b, out_a, {"gamma4": g4, "gamma5": g5}

    offsets = np.arange(t_max)[None, :] - np.asarray(nu)[:, None]
    mask = offsets >= 1
    gather = np.clip(offsets, 1, t_max - 1) - 1

    for spline, classes, shift, eps, anchor, out in (
        (config.spline_bmi, eta, g4, eps_b, bmi_anchor, out_b),
        (config.spline_a1c, xi, g5, eps_a, a1c_anchor, out_a),
    ):
        basis_rows = spline.basis().evaluate(np.arange(1, t_max, dtype=float))
        # random effect: scalar offset added to every coefficient of the class
        coefs = spline.coefficient_matrix()[np.asarray(classes) - 1] + shift[:, None]
        rel = np.take_along_axis(coefs @ basis_rows.T, gather, axis=1)
        factor = np.maximum(1.0 + rel + eps, config.trajectory_floor)
        np.copyto(out, np.asarray(anchor)[:, None] * factor, where=mask)
    return out_b, out_a, {"gamma4": g4, "gamma5": g5}


def sample_outcome_and_missingness(
    bmi, a1c, treated_matrix, baseline, config: SimConfig, rng, rng_missingness=None
):
    """Monthly event and ascertainment indicators from the realized series.

    Returns ``(event_month, r_matrix)``: the first event month (-1 when
    none occurs on the grid) and the per-month ascertainment indicators.
    """
    rng_missingness = rng_missingness if rng_missingness is not None else rng
    coef = config.coefficients
    cols = _baseline_columns(baseline, matrix_shape=True)
    cols["bmi"] = bmi
    cols["hgba1c"] = a1c
    cols["surgery"] = treated_matrix.astype(float)
    n, t_max = bmi.shape
    p_event = expit(linear_predictor(coef.omega, cols) + np.zeros((n, t_max)))
    hit = rng.random((n, t_max)) < p_event
    event = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
    p_r = expit(linear_predictor(coef.rho, cols) + np.zeros((n, t_max)))
    r_matrix = rng_missingness.random((n, t_max)) < p_r
    return event.astype(np.int64), r_matrix


def simulate_cohort(config: SimConfig) -> Cohort:
    """Generate one cohort: observed (masked) series plus pre-masking truth."""
    streams = rng_streams(config.seed)
    n, t_max = config.n_subjects, config.t_max
    baseline = sample_baseline(config, streams["baseline"], n)
    bmi_pre, a1c_pre, _, _ = simulate_presurgery_trajectory(
        baseline, config, streams["trajectory"]
    )
    nu, rygb = _treatment_schedule(
        baseline, bmi_pre, a1c_pre, config, streams["treatment"]
    )

    # latent classes: fixed-shape draws, applied only to treated subjects
    u_eta = streams["classes"].random(n)
    u_xi = streams["classes"].random(n)
    treated = nu >= 0
    rows = np.nonzero(treated)[0]
    eta = np.full(n, -1, dtype=np.int64)
    xi = np.full(n, -1, dtype=np.int64)
    if rows.size:
        coef = config.coefficients
        cols = _baseline_columns(baseline[rows])
        cols["bmi"] = bmi_pre[rows, nu[rows]]
        cols["hgba1c"] = a1c_pre[rows, nu[rows]]
        cols["bs_type_rygb"] = rygb[rows].astype(float)
        shift_eta = linear_predictor(coef.lambda_terms, cols) + np.zeros(rows.size)
        shift_xi = linear_predictor(coef.phi_terms, cols) + np.zeros(rows.size)
        eta[rows] = ordinal_class(coef.lambda_cuts, shift_eta, u_eta[rows])
        xi[rows] = ordinal_class(coef.phi_cuts, shift_xi, u_xi[rows])

    bmi = bmi_pre.copy()
    a1c = a1c_pre.copy()
    if rows.size:
        post_b, post_a, _ = simulate_postsurgery_trajectory(
            bmi_pre[rows, nu[rows]],
            a1c_pre[rows, nu[rows]],
            baseline[rows, _BIDX["a1c0"]],
            nu[rows],
            eta[rows],
            xi[rows],
            config,
            streams["postsurgery"],
        )
        fill = ~np.isnan(post_b)
        bmi[rows] = np.where(fill, post_b, bmi[rows])
        a1c[rows] = np.where(fill, post_a, a1c[rows])

    months = np.arange(t_max)[None, :]
    treated_matrix = treated[:, None] & (months >= nu[:, None])
    event, r_matrix = sample_outcome_and_missingness(
        bmi, a1c, treated_matrix, baseline, config,
        streams["outcome"], streams["missingness"],
    )

    # surgery scheduled after the observed event never happens
    undone = treated & (event >= 0) & (nu > event)
    nu = np.where(undone, -1, nu)
    rygb = np.where(undone, -1, rygb)

    alive = (event[:, None] < 0) | (months <= event[:, None])
    bmi_full = np.where(alive, bmi, np.nan)
    a1c_full = np.where(alive, a1c, np.nan)
    observed = alive & r_matrix
    return Cohort(
        subject_ids=np.arange(n, dtype=np.int64),
        baseline=baseline,
        bmi=np.where(observed, bmi, np.nan),
        a1c=np.where(observed, a1c, np.nan),
        surgery_month=nu.astype(np.int64),
        surgery_rygb=rygb.astype(np.int64),
        event_month=event,
        censor_month=np.full(n, -1, dtype=np.int64),
        censor_reason=np.full(n, "", dtype="U16"),
        t_max=t_max,
        bmi_full=bmi_full,
        a1c_full=a1c_full,
    )
