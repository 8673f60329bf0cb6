"""Subject-level bootstrap and confidence-interval construction.

Replicates resample whole subjects with replacement and rerun the entire
analysis (expansion, weight fitting, truncation, outcome model) on the
resampled cohort; duplicated subjects are treated as distinct. Replicate
RNG streams derive from (seed, replicate index), so results do not depend
on scheduling.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort
from .errors import ConfigError, EstimationError, SeqtteError
from .pipeline import AnalysisConfig, analyze

Z_LOOKUP = {0.90: 1.6448536269514722, 0.95: 1.959963984540054,
            0.99: 2.5758293035489004}
MIN_REPLICATES = 30


@dataclass
class BootstrapResult:
    estimates: np.ndarray  # successful replicate estimates
    n_requested: int
    n_failed: int
    failures: list[str]

    @property
    def failure_fraction(self) -> float:
        return self.n_failed / self.n_requested if self.n_requested else 0.0


def _replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def bootstrap_replicate(
    cohort: Cohort, analysis: AnalysisConfig, seed: int, index: int
) -> float:
    rng = _replicate_rng(seed, index)
    idx = rng.integers(0, cohort.n_subjects, cohort.n_subjects)
    return analyze(cohort.resample(idx), analysis).psi_hat


_WORKER_STATE: dict = {}


def _init_worker(cohort, analysis, seed):
    _WORKER_STATE["cohort"] = cohort
    _WORKER_STATE["analysis"] = analysis
    _WORKER_STATE["seed"] = seed


def _run_replicate(index: int):
    try:
        value = bootstrap_replicate(
            _WORKER_STATE["cohort"],
            _WORKER_STATE["analysis"],
            _WORKER_STATE["seed"],
            index,
        )
        return index, value, None
    except SeqtteError as exc:
        return index, np.nan, f"replicate {index}: {exc}"


def bootstrap(
    cohort: Cohort,
    analysis: AnalysisConfig,
    n_replicates: int,
    seed: int,
    n_jobs: int = 1,
) -> BootstrapResult:
    """Run ``n_replicates`` subject-level bootstrap replicates."""
    if n_replicates < 2:
        raise ConfigError("need at least 2 bootstrap replicates",
                          path="bootstrap.replicates")
    results: list[tuple[int, float, str | None]] = []
    if n_jobs <= 1:
        _init_worker(cohort, analysis, seed)
        results = [_run_replicate(i) for i in range(n_replicates)]
    else:
        with ProcessPoolExecutor(
            max_workers=n_jobs,
            initializer=_init_worker,
            initargs=(cohort, analysis, seed),
        ) as pool:
            chunk = max(1, n_replicates // (n_jobs * 8))
            results = list(
                pool.map(_run_replicate, range(n_replicates), chunksize=chunk)
            )
    results.sort(key=lambda item: item[0])
    estimates = np.array([v for _, v, err in results if err is None])
    failures = [err for _, _, err in results if err is not None]
    out = BootstrapResult(
        estimates=estimates,
        n_requested=n_replicates,
        n_failed=len(failures),
        failures=failures,
    )
    if out.failure_fraction > 0.01:
        warnings.warn(
            f"{out.n_failed}/{n_replicates} bootstrap replicates failed",
            stacklevel=2,
        )
    return out


def intervals(
    replicates: np.ndarray, psi_hat: float, level: float = 0.95
) -> dict[str, tuple[float, float]]:
    """Normal, pivotal, and percentile intervals from replicate estimates.

    Quantiles use linear interpolation on order statistics.
    """
    replicates = np.asarray(replicates, dtype=float)
    replicates = replicates[np.isfinite(replicates)]
    if replicates.size < MIN_REPLICATES:
        raise EstimationError(
            f"interval construction needs >= {MIN_REPLICATES} successful "
            f"replicates, got {replicates.size}"
        )
    if not 0 < level < 1:
        raise ConfigError("level must be in (0, 1)", path="level")
    alpha = 1.0 - level
    z = Z_LOOKUP.get(round(level, 2))
    if z is None:
        from scipy.special import ndtri

        z = float(ndtri(1 - alpha / 2))
    sd = float(replicates.std(ddof=1))
    q_lo, q_hi = np.quantile(replicates, [alpha / 2, 1 - alpha / 2])
    return {
        "normal": (psi_hat - z * sd, psi_hat + z * sd),
        "pivotal": (2 * psi_hat - float(q_hi), 2 * psi_hat - float(q_lo)),
        "percentile": (float(q_lo), float(q_hi)),
    }
