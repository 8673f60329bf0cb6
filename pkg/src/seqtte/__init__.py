"""Sequential target-trial emulation with inverse-probability weighting
for missing eligibility criteria, a longitudinal EHR-style simulator, and
a Monte-Carlo benchmark harness."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DataError,
    EstimationError,
    PositivityError,
    RankDeficiencyError,
    SeparationError,
    SeqtteError,
)
