"""Weighted binary logistic regression by iteratively reweighted least squares.

This is the fitter behind every weight model and the pooled outcome model.
Outcomes may be fractional in [0, 1]; with per-row weights this lets rows
that share a design vector be collapsed to (weight sum, weighted event
fraction) without changing the likelihood, which the outcome model relies
on for speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import RankDeficiencyError, SeparationError

GRAD_TOL = 1e-8
DEV_TOL = 1e-12
MAX_ITER = 100
PROB_CLAMP = 1e-12
SEPARATION_COEF = 30.0


def expit(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


@dataclass
class GlmFit:
    """Fitted coefficients plus convergence diagnostics."""

    coefficients: np.ndarray
    converged: bool
    iterations: int
    final_deviance: float
    design_column_names: list[str]

    def linear_predictor(self, design) -> np.ndarray:
        design = np.asarray(design, dtype=float)
        if design.shape[-1] != self.coefficients.size:
            raise ValueError(
                f"design has {design.shape[-1]} columns, fit has "
                f"{self.coefficients.size} coefficients"
            )
        return design @ self.coefficients

    def to_dict(self) -> dict:
        return {
            "coefficients": dict(
                zip(self.design_column_names, map(float, self.coefficients))
            ),
            "converged": self.converged,
            "iterations": self.iterations,
            "final_deviance": float(self.final_deviance),
        }


def _diagnose_rank(design: np.ndarray, names: list[str]) -> None:
    # QR with column pivoting exposes which columns are aliased; only run
    # when the cheap Cholesky path has already failed
    if design.shape[0] < design.shape[1]:
        raise RankDeficiencyError(names)
    _, r, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(design.shape) * np.finfo(float).eps if diag.size else 0.0
    dead = diag <= tol
    if np.any(dead):
        raise RankDeficiencyError([names[j] for j in piv[dead]])


def _solve_newton(xtwx: np.ndarray, grad: np.ndarray, design, names):
    """Cholesky solve; a failed or near-singular factor means aliasing.

    A singular factor with a full-rank design can still occur once working
    weights collapse under quasi-separation; fall back to a least-squares
    step there and let the divergence check decide.
    """
    try:
        factor = scipy.linalg.cho_factor(xtwx, check_finite=False)
        diag = np.abs(np.diag(factor[0]))
        if diag.size and diag.min() <= diag.max() * 1e-10:
            _diagnose_rank(design, names)
        return scipy.linalg.cho_solve(factor, grad, check_finite=False)
    except scipy.linalg.LinAlgError:
        _diagnose_rank(design, names)
        return np.linalg.lstsq(xtwx, grad, rcond=None)[0]


def _loglik(eta, y, w):
    # canonical form: sum w * (y*eta - log(1 + exp(eta))), valid for y in [0,1]
    return float(w @ (y * eta - np.logaddexp(0.0, eta)))


def _saturated_loglik(y, w):
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y), 0.0) + np.where(
            y < 1, (1 - y) * np.log1p(-y), 0.0
        )
    return float(np.sum(w * term))


def _deviance(y, p, w):
    # weighted Bernoulli deviance, valid for fractional y
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / p), 0.0) + np.where(
            y < 1, (1 - y) * np.log((1 - y) / (1 - p)), 0.0
        )
    return 2.0 * float(np.sum(w * term))


def fit_logistic(design, y, weights=None, column_names=None) -> GlmFit:
    """Maximize the weighted Bernoulli log-likelihood for a logit model.

    Parameters
    ----------
    design : (n, p) array, one row per observation (include the intercept
        column explicitly).
    y : (n,) outcomes in [0, 1].
    weights : (n,) positive case weights; defaults to 1.
    column_names : labels used in error messages and the serialized fit.

    Raises
    ------
    RankDeficiencyError
        if the design columns are linearly dependent.
    SeparationError
        if coefficients diverge with a non-vanishing gradient.
    """
    design = np.asarray(design, dtype=float)
    if design.ndim != 2:
        raise ValueError("design must be 2-d")
    y = np.asarray(y, dtype=float)
    n, p = design.shape
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=float)
    if y.shape != (n,) or weights.shape != (n,):
        raise ValueError("design, y, and weights must have matching lengths")
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be positive and finite")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("outcomes must lie in [0, 1]")
    names = list(column_names) if column_names is not None else [
        f"x{j}" for j in range(p)
    ]
    if len(names) != p:
        raise ValueError("column_names length must match design columns")

    beta = np.zeros(p)
    # warm start the intercept when an all-ones column is present
    ybar = float(np.clip((weights @ y) / weights.sum(), 1e-6, 1 - 1e-6))
    for j in range(p):
        if np.all(design[:, j] == 1.0):
            beta[j] = np.log(ybar / (1 - ybar))
            break
    eta = design @ beta
    ll_sat = _saturated_loglik(y, weights)
    ll = _loglik(eta, y, weights)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        prob = np.clip(expit(eta), PROB_CLAMP, 1 - PROB_CLAMP)
        grad = design.T @ (weights * (y - prob))
        irls_w = weights * prob * (1 - prob)
        xtwx = design.T @ (design * irls_w[:, None])
        step = _solve_newton(xtwx, grad, design, names)

        # step-halve until the deviance (equivalently -loglik) does not
        # increase; slack scales with |loglik| to stay above summation roundoff
        slack = 1e-10 * max(1.0, abs(ll))
        accepted = False
        new_beta, new_ll, new_eta = beta, ll, eta
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            cand_eta = design @ cand
            cand_ll = _loglik(cand_eta, y, weights)
            if cand_ll >= ll - slack:
                new_beta, new_ll, new_eta = cand, cand_ll, cand_eta
                accepted = True
                break
            scale *= 0.5
        beta, old_ll, ll, eta = new_beta, ll, new_ll, new_eta
        if not accepted:
            break  # stalled at roundoff; the post-loop gradient check decides

        grad_norm = float(np.max(np.abs(grad)))
        rel_dev = 2.0 * abs(ll - old_ll) / max(2.0 * abs(ll_sat - ll), 1.0)
        if grad_norm <= GRAD_TOL and rel_dev <= DEV_TOL:
            converged = True
            break

    if not converged:
        prob = np.clip(expit(eta), PROB_CLAMP, 1 - PROB_CLAMP)
        grad = design.T @ (weights * (y - prob))
        if float(np.max(np.abs(grad))) <= GRAD_TOL:
            converged = True
        elif float(np.max(np.abs(beta))) > SEPARATION_COEF:
            worst = int(np.argmax(np.abs(beta)))
            raise SeparationError(names[worst], float(beta[worst]))

    return GlmFit(
        coefficients=beta,
        converged=converged,
        iterations=it,
        final_deviance=2.0 * (ll_sat - ll),
        design_column_names=names,
    )


def predict_prob(fit: GlmFit, design_row) -> np.ndarray | float:
    """expit(x @ beta), clamped away from {0, 1} for downstream reciprocals."""
    row = np.asarray(design_row, dtype=float)
    scalar = row.ndim == 1
    prob = np.clip(expit(fit.linear_predictor(np.atleast_2d(row))), PROB_CLAMP,
                   1 - PROB_CLAMP)
    return float(prob[0]) if scalar else prob


def log_likelihood(design, y, weights, beta) -> float:
    """Weighted Bernoulli log-likelihood at ``beta`` (for diagnostics/tests)."""
    p = np.clip(expit(np.asarray(design) @ beta), PROB_CLAMP, 1 - PROB_CLAMP)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * (y * np.log(p) + (1 - y) * np.log(1 - p))))
