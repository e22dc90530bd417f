"""Duration-dependent hidden Markov model for clickstream exit prediction."""

from .model import (
    COVARIATE_NAMES,
    EXIT_INDEX,
    PAGE_ORDER,
    CovariateVector,
    ModelParams,
    PageCategory,
    Session,
    duration_pmf,
    duration_survival,
    emission_probs,
    expected_duration,
    renewal_prob,
    renewal_prob_shifted,
    transition_probs,
)

__version__ = "0.1.0"

__all__ = [
    "COVARIATE_NAMES",
    "EXIT_INDEX",
    "PAGE_ORDER",
    "CovariateVector",
    "ModelParams",
    "PageCategory",
    "Session",
    "duration_pmf",
    "duration_survival",
    "emission_probs",
    "expected_duration",
    "renewal_prob",
    "renewal_prob_shifted",
    "transition_probs",
    "__version__",
]
