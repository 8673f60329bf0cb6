"""Natural cubic spline basis used by the post-surgery trajectory models.

The basis is built from a cubic B-spline design on knots with 4-fold
boundary multiplicity, with the two second-derivative-at-boundary
constraints projected out and the intercept column dropped, giving
``len(interior_knots) + 1`` columns. Beyond the boundary knots the basis
extrapolates linearly. Column signs are canonicalized so each basis
function is nonnegative at its own peak, which keeps coefficient vectors
interpretable as (signed) curve weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConfigError


class NaturalSplineBasis:
    """Evaluator for an intercept-free natural cubic spline basis."""

    def __init__(self, interior_knots, boundary_knots=(0.0, 60.0)):
        interior = np.asarray(interior_knots, dtype=float)
        lo, hi = float(boundary_knots[0]), float(boundary_knots[1])
        if interior.ndim != 1 or interior.size == 0:
            raise ConfigError("interior knots must be a nonempty 1-d list")
        if np.any(np.diff(interior) <= 0):
            raise ConfigError("interior knots must be strictly increasing")
        if not (lo < interior[0] and interior[-1] < hi):
            raise ConfigError("boundary knots must bracket the interior knots")
        self.interior_knots = interior
        self.boundary_knots = (lo, hi)
        self.dim = interior.size + 1

        knots = np.concatenate([[lo] * 4, interior, [hi] * 4])
        n_full = knots.size - 4  # cubic B-spline count
        self._bspl = BSpline(knots, np.eye(n_full), 3, extrapolate=False)
        # second derivatives at the boundaries, intercept column dropped
        curv = self._bspl.derivative(2)(np.array([lo, hi]))[:, 1:]
        q, _ = np.linalg.qr(curv.T, mode="complete")
        self._proj = q[:, 2:]  # (n_full - 1, dim) null space of the constraints
        self._canonicalize_signs()

    def _canonicalize_signs(self):
        lo, hi = self.boundary_knots
        grid = np.linspace(lo, hi, 512)
        vals = self._bspl(grid)[:, 1:] @ self._proj
        peak = vals[np.argmax(np.abs(vals), axis=0), np.arange(self.dim)]
        self._proj = self._proj * np.where(peak < 0, -1.0, 1.0)

    def evaluate(self, x) -> np.ndarray:
        """Return the (len(x), dim) basis matrix, linear beyond boundaries."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.boundary_knots
        inner = np.clip(x, lo, hi)
        base = self._bspl(inner)[:, 1:] @ self._proj
        out = base
        outside = (x < lo) | (x > hi)
        if np.any(outside):
            d1 = self._bspl.derivative(1)(inner[outside])[:, 1:] @ self._proj
            out = base.copy()
            out[outside] += (x[outside] - inner[outside])[:, None] * d1
        return out

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)


@dataclass(frozen=True)
class SplineSpec:
    """Knot layout plus one coefficient vector per latent trajectory class."""

    interior_knots: tuple[float, ...]
    class_coefficients: tuple[tuple[float, ...], ...]
    boundary_knots: tuple[float, float] = (0.0, 60.0)

    def __post_init__(self):
        dim = len(self.interior_knots) + 1
        if len(self.class_coefficients) != 5:
            raise ConfigError(
                "expected 5 class coefficient vectors, got "
                f"{len(self.class_coefficients)}",
                path="spline.class_coefficients",
            )
        for j, vec in enumerate(self.class_coefficients):
            if len(vec) != dim:
                raise ConfigError(
                    f"class {j + 1} coefficient vector has length {len(vec)}, "
                    f"basis dimension is {dim}",
                    path="spline.class_coefficients",
                )

    def basis(self) -> NaturalSplineBasis:
        return NaturalSplineBasis(self.interior_knots, self.boundary_knots)

    def coefficient_matrix(self) -> np.ndarray:
        """(5, dim) array, row j-1 for latent class j."""
        return np.asarray(self.class_coefficients, dtype=float)
