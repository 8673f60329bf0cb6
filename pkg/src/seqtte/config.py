"""Simulation configuration: every coefficient of the data-generating
process, the spline layouts, the baseline sampler, and the RNG seed.

Coefficient blocks are name -> value maps over design columns
(``intercept`` plus the names in :data:`seqtte.domain.BASELINE_COLUMNS`,
the time-varying ``bmi``/``hgba1c``, the treatment terms ``surgery`` /
``bs_type_rygb``, and ``a:b`` products), so presets are plain JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .copula import BaselineDistribution
from .domain import BASELINE_COLUMNS, TIME_VARYING_COLUMNS
from .errors import ConfigError
from .splines import SplineSpec

MECHANISMS = ("m_bias", "effect_heterogeneity", "m_bias_mediator")
STUDIES = ("study1", "study2")

_BASE_TERMS = set(BASELINE_COLUMNS)
_TIME_TERMS = set(TIME_VARYING_COLUMNS)
_TREAT_TERMS = {"surgery", "bs_type_rygb"}


def _check_terms(name: str, coefs: dict, allowed: set[str]) -> dict[str, float]:
    out = {}
    for key, value in coefs.items():
        parts = key.split(":") if key != "intercept" else [key]
        for part in parts:
            if part != "intercept" and part not in allowed:
                raise ConfigError(
                    f"unknown design term {part!r}", path=f"coefficients.{name}.{key}"
                )
        out[key] = float(value)
    return out


@dataclass(frozen=True)
class CoefficientBlock:
    """All coefficients of the data-generating process."""

    beta1: dict[str, float]  # pre-surgery BMI linear drift
    beta2: dict[str, float]  # pre-surgery BMI quadratic drift
    beta3: dict[str, float]  # pre-surgery A1c linear drift
    delta: dict[str, float]  # quadratic-trajectory class membership
    alpha: dict[str, float]  # monthly surgery uptake
    pi: dict[str, float]  # surgery type (1 = gastric bypass)
    lambda_cuts: tuple[float, float, float, float]
    lambda_terms: dict[str, float]  # BMI latent-class shifts
    phi_cuts: tuple[float, float, float, float]
    phi_terms: dict[str, float]  # A1c latent-class shifts
    omega: dict[str, float]  # monthly outcome hazard
    rho: dict[str, float]  # monthly measurement ascertainment
    sigma2_bmi: float
    a1c_noise_scale: float  # error variance = scale * a1c0^2
    tau2: tuple[float, float, float, float, float]

    def __post_init__(self):
        object.__setattr__(
            self, "beta1", _check_terms("beta1", self.beta1, _BASE_TERMS)
        )
        object.__setattr__(
            self, "beta2", _check_terms("beta2", self.beta2, _BASE_TERMS)
        )
        object.__setattr__(
            self, "beta3", _check_terms("beta3", self.beta3, _BASE_TERMS)
        )
        object.__setattr__(
            self, "delta", _check_terms("delta", self.delta, _BASE_TERMS)
        )
        object.__setattr__(
            self, "alpha",
            _check_terms("alpha", self.alpha, _BASE_TERMS | _TIME_TERMS),
        )
        object.__setattr__(
            self, "pi", _check_terms("pi", self.pi, _BASE_TERMS | _TIME_TERMS)
        )
        class_terms = _BASE_TERMS | _TIME_TERMS | {"bs_type_rygb"}
        object.__setattr__(
            self, "lambda_terms",
            _check_terms("lambda_terms", self.lambda_terms, class_terms),
        )
        object.__setattr__(
            self, "phi_terms",
            _check_terms("phi_terms", self.phi_terms, class_terms),
        )
        full = _BASE_TERMS | _TIME_TERMS | _TREAT_TERMS
        object.__setattr__(self, "omega", _check_terms("omega", self.omega, full))
        object.__setattr__(self, "rho", _check_terms("rho", self.rho, full))
        for name, cuts in (("lambda_cuts", self.lambda_cuts),
                           ("phi_cuts", self.phi_cuts)):
            arr = tuple(float(c) for c in cuts)
            if len(arr) != 4:
                raise ConfigError("need 4 ordinal cutpoints",
                                  path=f"coefficients.{name}")
            if any(b < a for a, b in zip(arr, arr[1:])):
                raise ConfigError("cutpoints must be nondecreasing",
                                  path=f"coefficients.{name}")
            object.__setattr__(self, name, arr)
        for name in ("sigma2_bmi", "a1c_noise_scale"):
            if getattr(self, name) < 0:
                raise ConfigError("variance parameters must be >= 0",
                                  path=f"coefficients.{name}")
        tau2 = tuple(float(v) for v in self.tau2)
        if len(tau2) != 5 or any(v < 0 for v in tau2):
            raise ConfigError("tau2 must be 5 nonnegative variances",
                              path="coefficients.tau2")
        object.__setattr__(self, "tau2", tau2)

    def to_dict(self) -> dict:
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "beta3": self.beta3,
            "delta": self.delta,
            "alpha": self.alpha,
            "pi": self.pi,
            "lambda_cuts": list(self.lambda_cuts),
            "lambda_terms": self.lambda_terms,
            "phi_cuts": list(self.phi_cuts),
            "phi_terms": self.phi_terms,
            "omega": self.omega,
            "rho": self.rho,
            "sigma2_bmi": self.sigma2_bmi,
            "a1c_noise_scale": self.a1c_noise_scale,
            "tau2": list(self.tau2),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CoefficientBlock":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown fields {sorted(unknown)}",
                              path="coefficients")
        missing = known - set(data)
        if missing:
            raise ConfigError(f"missing fields {sorted(missing)}",
                              path="coefficients")
        kwargs = dict(data)
        kwargs["lambda_cuts"] = tuple(kwargs["lambda_cuts"])
        kwargs["phi_cuts"] = tuple(kwargs["phi_cuts"])
        kwargs["tau2"] = tuple(kwargs["tau2"])
        return cls(**kwargs)


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int
    t_max: int
    mechanism: str
    study: str
    seed: int
    coefficients: CoefficientBlock
    spline_bmi: SplineSpec
    spline_a1c: SplineSpec
    baseline_sampler: BaselineDistribution
    treatment_gate_bmi: float = 35.0
    trajectory_floor: float = 0.01  # relative floor keeping measurements positive

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be >= 1", path="n_subjects")
        if self.t_max < 2:
            raise ConfigError("t_max must be >= 2 months", path="t_max")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"mechanism must be one of {MECHANISMS}",
                              path="mechanism")
        if self.study not in STUDIES:
            raise ConfigError(f"study must be one of {STUDIES}", path="study")

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "t_max": self.t_max,
            "mechanism": self.mechanism,
            "study": self.study,
            "seed": self.seed,
            "coefficients": self.coefficients.to_dict(),
            "spline_bmi": _spline_to_dict(self.spline_bmi),
            "spline_a1c": _spline_to_dict(self.spline_a1c),
            "baseline_sampler": self.baseline_sampler.to_dict(),
            "treatment_gate_bmi": self.treatment_gate_bmi,
            "trajectory_floor": self.trajectory_floor,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown fields {sorted(unknown)}", path="config")
        try:
            return cls(
                n_subjects=int(data["n_subjects"]),
                t_max=int(data["t_max"]),
                mechanism=data["mechanism"],
                study=data["study"],
                seed=int(data["seed"]),
                coefficients=CoefficientBlock.from_dict(data["coefficients"]),
                spline_bmi=_spline_from_dict(data["spline_bmi"]),
                spline_a1c=_spline_from_dict(data["spline_a1c"]),
                baseline_sampler=BaselineDistribution.from_dict(
                    data["baseline_sampler"]
                ),
                treatment_gate_bmi=float(data.get("treatment_gate_bmi", 35.0)),
                trajectory_floor=float(data.get("trajectory_floor", 0.01)),
            )
        except KeyError as exc:
            raise ConfigError(f"missing field {exc.args[0]!r}", path="config")


def _spline_to_dict(spec: SplineSpec) -> dict:
    return {
        "interior_knots": list(spec.interior_knots),
        "boundary_knots": list(spec.boundary_knots),
        "class_coefficients": [list(row) for row in spec.class_coefficients],
    }


def _spline_from_dict(data: dict) -> SplineSpec:
    return SplineSpec(
        interior_knots=tuple(float(v) for v in data["interior_knots"]),
        class_coefficients=tuple(
            tuple(float(v) for v in row) for row in data["class_coefficients"]
        ),
        boundary_knots=tuple(float(v) for v in data.get("boundary_knots", (0, 60))),
    )


def mechanism_covariates(mechanism: str) -> dict[str, list[str]]:
    """Structural covariate roles per missingness mechanism.

    ``l_ra`` drive both ascertainment and treatment, ``l_ry`` drive both
    ascertainment and outcome, ``l_a`` drive treatment uptake, and ``l_r``
    is the full ascertainment set.
    """
    if mechanism in ("m_bias", "effect_heterogeneity"):
        l_ra = ["smoking_former", "smoking_current", "site"]
        l_ry = ["elix_score"]
    elif mechanism == "m_bias_mediator":
        l_ra = ["site"]
        l_ry = ["elix_score", "insulin"]
    else:
        raise ConfigError(f"unknown mechanism {mechanism!r}", path="mechanism")
    return {
        "l_ra": l_ra,
        "l_ry": l_ry,
        "l_r": l_ra + l_ry,
        "l_a": ["smoking_former", "smoking_current"],
    }


def _preset_text(name: str) -> str:
    try:
        return (
            resources.files("seqtte.presets").joinpath(f"{name}.json").read_text()
        )
    except FileNotFoundError:
        available = sorted(
            p.stem for p in resources.files("seqtte.presets").iterdir()
            if p.name.endswith(".json")
        )
        raise ConfigError(
            f"unknown preset {name!r}; available: {available}", path="preset"
        ) from None


def load_sim_config(
    source: str | Path | dict,
    **overrides,
) -> SimConfig:
    """Build a SimConfig from a preset name, JSON path, or dict.

    Keyword overrides replace top-level fields (``n_subjects``, ``seed``,
    ``study``, ...).
    """
    if isinstance(source, dict):
        data = dict(source)
    else:
        text = (
            Path(source).read_text()
            if str(source).endswith(".json")
            else _preset_text(str(source))
        )
        data = json.loads(text)
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    return SimConfig.from_dict(data)


def load_rule_preset(name: str) -> dict:
    return json.loads(_preset_text(name))
