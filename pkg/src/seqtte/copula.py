"""Gaussian-copula sampler for baseline covariates.

Source covariate vectors are not redistributable, so baselines are
synthesized from configurable marginals joined by a Gaussian copula. The
supplied matrix is interpreted as a rank-correlation target: for the
latent normal draw it is mapped through ``2 sin(pi * rho / 6)``, which
makes the Spearman correlation of continuous marginals equal the supplied
value (discrete marginals attenuate it).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import ConfigError

#: Canonical sampling order; ``smoking`` is the 3-level code (0/1/2).
COPULA_VARIABLES = (
    "gender",
    "race",
    "site",
    "smoking",
    "insulin",
    "elix_score",
    "bmi0",
    "a1c0",
)


def _ppf(spec: dict, u: np.ndarray, path: str) -> np.ndarray:
    kind = spec.get("dist")
    if kind == "bernoulli":
        return (u > 1.0 - float(spec["p"])).astype(float)
    if kind == "categorical":
        probs = np.asarray(spec["probs"], dtype=float)
        if probs.ndim != 1 or probs.size < 2 or abs(probs.sum() - 1.0) > 1e-8:
            raise ConfigError("categorical probs must sum to 1", path=path)
        edges = np.cumsum(probs)
        return np.searchsorted(edges, u, side="left").clip(0, probs.size - 1).astype(
            float
        )
    if kind == "gamma":
        shape, scale = float(spec["shape"]), float(spec["scale"])
        if shape <= 0 or scale <= 0:
            raise ConfigError("gamma shape/scale must be > 0", path=path)
        return stats.gamma.ppf(u, a=shape, scale=scale) + float(spec.get("shift", 0.0))
    if kind == "beta":
        a, b = float(spec["a"]), float(spec["b"])
        if a <= 0 or b <= 0:
            raise ConfigError("beta a/b must be > 0", path=path)
        return stats.beta.ppf(u, a, b) * float(spec.get("scale", 1.0)) + float(
            spec.get("shift", 0.0)
        )
    if kind == "discrete":
        values = np.asarray(spec["values"], dtype=float)
        probs = np.asarray(spec["probs"], dtype=float)
        if values.shape != probs.shape or abs(probs.sum() - 1.0) > 1e-8:
            raise ConfigError("discrete values/probs must align and sum to 1",
                              path=path)
        edges = np.cumsum(probs)
        return values[np.searchsorted(edges, u, side="left").clip(0, values.size - 1)]
    if kind == "normal":
        return float(spec["mean"]) + float(spec["sd"]) * special.ndtri(u)
    if kind == "lognormal":
        return np.exp(
            float(spec["mu"]) + float(spec["sigma"]) * special.ndtri(u)
        ) + float(spec.get("shift", 0.0))
    if kind == "uniform":
        lo, hi = float(spec["low"]), float(spec["high"])
        return lo + (hi - lo) * u
    if kind == "point":
        return np.full_like(u, float(spec["value"]))
    raise ConfigError(f"unknown marginal dist {kind!r}", path=path)


@dataclass(frozen=True)
class BaselineDistribution:
    """Marginal specs per baseline covariate plus a rank-correlation matrix."""

    marginals: dict[str, dict]
    correlation: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        missing = set(COPULA_VARIABLES) - set(self.marginals)
        if missing:
            raise ConfigError(
                f"missing marginals for {sorted(missing)}", path="baseline.marginals"
            )
        unknown = set(self.marginals) - set(COPULA_VARIABLES)
        if unknown:
            raise ConfigError(
                f"unknown marginal names {sorted(unknown)}", path="baseline.marginals"
            )
        self.correlation_matrix()  # validates

    def correlation_matrix(self) -> np.ndarray:
        p = len(COPULA_VARIABLES)
        if self.correlation is None:
            return np.eye(p)
        mat = np.asarray(self.correlation, dtype=float)
        if mat.shape != (p, p):
            raise ConfigError(
                f"correlation must be {p}x{p} over {COPULA_VARIABLES}",
                path="baseline.correlation",
            )
        if not np.allclose(mat, mat.T, atol=1e-10):
            raise ConfigError("correlation must be symmetric",
                              path="baseline.correlation")
        if not np.allclose(np.diag(mat), 1.0, atol=1e-10):
            raise ConfigError("correlation must have unit diagonal",
                              path="baseline.correlation")
        if np.linalg.eigvalsh(mat).min() < -1e-10:
            raise ConfigError("correlation must be positive semidefinite",
                              path="baseline.correlation")
        return mat

    def latent_cholesky(self) -> np.ndarray:
        latent = 2.0 * np.sin(np.pi * self.correlation_matrix() / 6.0)
        # tiny jitter guards PSD matrices that graze zero eigenvalues
        eigmin = np.linalg.eigvalsh(latent).min()
        if eigmin < -1e-10:
            raise ConfigError(
                "rank-correlation matrix maps to a non-PSD latent correlation",
                path="baseline.correlation",
            )
        if eigmin < 1e-12:
            latent = latent + np.eye(latent.shape[0]) * 1e-10
        return np.linalg.cholesky(latent)

    def sample(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        chol = self.latent_cholesky()
        z = rng.standard_normal((n, len(COPULA_VARIABLES))) @ chol.T
        u = special.ndtr(z).clip(1e-12, 1 - 1e-12)
        out = {}
        for j, name in enumerate(COPULA_VARIABLES):
            out[name] = _ppf(self.marginals[name], u[:, j],
                             path=f"baseline.marginals.{name}")
        return out

    def to_dict(self) -> dict:
        payload = {"marginals": self.marginals}
        if self.correlation is not None:
            payload["correlation"] = [list(row) for row in self.correlation]
        return payload

    @classmethod
    def from_dict(cls, data: dict) -> "BaselineDistribution":
        corr = data.get("correlation")
        return cls(
            marginals=dict(data["marginals"]),
            correlation=None
            if corr is None
            else tuple(tuple(float(v) for v in row) for row in corr),
        )
