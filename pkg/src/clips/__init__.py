"""Covariance-engaged set classification.

Bayes set rules for Gaussian classes, plug-in estimators, the CLIPS
classifier (linear-programming estimates of the quadratic and linear
discriminant coefficients) and a Monte Carlo harness for synthetic studies.
"""

from clips.linalg import (
    CholeskyFactor,
    EmptySet,
    NotPositiveDefinite,
    SetStatistics,
    cholesky,
    log_det_pd,
    set_statistics,
    solve_pd,
)
from clips.model import (
    DimensionMismatch,
    DiscriminantCoefficients,
    GaussianClassModel,
    LabeledSet,
    SetSample,
    classify_bayes,
    classify_majority_vote,
    classify_mean_qda,
    discriminant_g,
    oracle_coefficients,
)

__version__ = "0.1.0"

__all__ = [
    "CholeskyFactor",
    "DimensionMismatch",
    "DiscriminantCoefficients",
    "EmptySet",
    "GaussianClassModel",
    "LabeledSet",
    "NotPositiveDefinite",
    "SetSample",
    "SetStatistics",
    "cholesky",
    "classify_bayes",
    "classify_majority_vote",
    "classify_mean_qda",
    "discriminant_g",
    "log_det_pd",
    "oracle_coefficients",
    "set_statistics",
    "solve_pd",
]
