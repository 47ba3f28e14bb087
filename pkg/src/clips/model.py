"""Gaussian class populations, discriminant coefficients and set decision rules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from clips.linalg import (
    CholeskyFactor,
    SetStatistics,
    cholesky,
    inverse_pd,
    log_det_pd,
    set_statistics,
)


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GaussianClassModel:
    """One class population N(mean, covariance) with prior probability ``prior``."""

    prior: float
    mean: np.ndarray
    covariance: np.ndarray
    factor: CholeskyFactor = field(init=False, repr=False)
    precision: np.ndarray = field(init=False, repr=False)
    log_det: float = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.prior < 1.0:
            raise ValueError(f"prior must lie in (0, 1), got {self.prior}")
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"mean has length {mean.size}, covariance is {cov.shape}")
        factor = cholesky(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", (cov + cov.T) / 2)
        object.__setattr__(self, "factor", factor)
        object.__setattr__(self, "precision", inverse_pd(cov, factor=factor))
        object.__setattr__(self, "log_det", log_det_pd(cov, factor=factor))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class DiscriminantCoefficients:
    """Coefficients of g = log(pi1/pi2)/m + b0 + b'x + x'Qx/2 + tr(QS)/2."""

    prior_log_ratio: float
    constant: float
    linear: np.ndarray
    quadratic: np.ndarray

    def __post_init__(self):
        linear = np.atleast_1d(np.asarray(self.linear, dtype=float))
        quad = np.atleast_2d(np.asarray(self.quadratic, dtype=float))
        if quad.shape != (linear.size, linear.size):
            raise DimensionMismatch(f"linear has length {linear.size}, quadratic is {quad.shape}")
        if not (
            np.isfinite(self.prior_log_ratio)
            and np.isfinite(self.constant)
            and np.all(np.isfinite(linear))
            and np.all(np.isfinite(quad))
        ):
            raise ValueError("discriminant coefficients must be finite")
        if np.max(np.abs(quad - quad.T), initial=0.0) > 1e-10:
            raise ValueError("quadratic coefficient must be symmetric")
        object.__setattr__(self, "prior_log_ratio", float(self.prior_log_ratio))
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "quadratic", quad)

    @property
    def dim(self) -> int:
        return self.linear.size

    @classmethod
    def zeros(cls, p: int) -> "DiscriminantCoefficients":
        return cls(0.0, 0.0, np.zeros(p), np.zeros((p, p)))


@dataclass(frozen=True)
class SetSample:
    observations: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.observations, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
            raise ValueError(f"a set needs at least one observation, got shape {x.shape}")
        object.__setattr__(self, "observations", x)

    @property
    def m(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]

    def statistics(self) -> SetStatistics:
        return set_statistics(self.observations)


@dataclass(frozen=True)
class LabeledSet:
    sample: SetSample
    label: int

    def __post_init__(self):
        if self.label not in (1, 2):
            raise ValueError(f"label must be 1 or 2, got {self.label!r}")
        if not isinstance(self.sample, SetSample):
            object.__setattr__(self, "sample", SetSample(self.sample))


def _check_dim(coeffs_dim: int, data_dim: int) -> None:
    if coeffs_dim != data_dim:
        raise DimensionMismatch(f"coefficients are {coeffs_dim}-dimensional, data is {data_dim}")


def _stats(set_or_stats) -> SetStatistics:
    if isinstance(set_or_stats, SetStatistics):
        return set_or_stats
    if isinstance(set_or_stats, LabeledSet):
        return set_or_stats.sample.statistics()
    if isinstance(set_or_stats, SetSample):
        return set_or_stats.statistics()
    return SetSample(set_or_stats).statistics()


def _observations(set_like) -> np.ndarray:
    if isinstance(set_like, LabeledSet):
        return set_like.sample.observations
    if isinstance(set_like, SetSample):
        return set_like.observations
    return SetSample(set_like).observations


def oracle_coefficients(
    class1: GaussianClassModel, class2: GaussianClassModel
) -> DiscriminantCoefficients:
    """Bayes-rule coefficients for two known Gaussian populations."""
    if class1.dim != class2.dim:
        raise DimensionMismatch(f"class dimensions differ: {class1.dim} vs {class2.dim}")
    b1 = class1.precision @ class1.mean
    b2 = class2.precision @ class2.mean
    constant = (-(class1.log_det - class2.log_det) - class1.mean @ b1 + class2.mean @ b2) / 2
    quad = class2.precision - class1.precision
    return DiscriminantCoefficients(
        prior_log_ratio=np.log(class1.prior / class2.prior),
        constant=constant,
        linear=b1 - b2,
        quadratic=(quad + quad.T) / 2,
    )


def discriminant_g(coeffs: DiscriminantCoefficients, stats) -> float:
    s = _stats(stats)
    _check_dim(coeffs.dim, s.mean.size)
    q = coeffs.quadratic
    xbar = s.mean
    return float(
        coeffs.prior_log_ratio / s.m
        + coeffs.constant
        + coeffs.linear @ xbar
        + xbar @ q @ xbar / 2
        + np.sum(q * s.scatter) / 2
    )


def observation_scores(coeffs: DiscriminantCoefficients, set_like) -> np.ndarray:
    """Per-observation QDA scores whose average is the set discriminant."""
    x = _observations(set_like)
    _check_dim(coeffs.dim, x.shape[1])
    m = x.shape[0]
    quad = np.einsum("ij,jk,ik->i", x, coeffs.quadratic, x)
    return coeffs.prior_log_ratio / m + coeffs.constant + x @ coeffs.linear + quad / 2


def classify_bayes(coeffs: DiscriminantCoefficients, set_like) -> int:
    return 1 if discriminant_g(coeffs, _stats(set_like)) > 0 else 2


def mean_qda_score(
    class1: GaussianClassModel, class2: GaussianClassModel, set_like
) -> float:
    """QDA discriminant of the set mean under covariances scaled by 1/m."""
    s = _stats(set_like)
    _check_dim(class1.dim, s.mean.size)
    coeffs = oracle_coefficients(class1, class2)
    # only the log-determinant term of the constant carries the 1/m factor
    shifted = coeffs.constant + (class1.log_det - class2.log_det) * (1.0 - 1.0 / s.m) / 2
    xbar = s.mean
    return float(
        coeffs.prior_log_ratio / s.m
        + shifted
        + coeffs.linear @ xbar
        + xbar @ coeffs.quadratic @ xbar / 2
    )


def classify_mean_qda(class1: GaussianClassModel, class2: GaussianClassModel, set_like) -> int:
    return 1 if mean_qda_score(class1, class2, set_like) > 0 else 2


def classify_majority_vote(coeffs: DiscriminantCoefficients, set_like) -> int:
    votes = np.sign(observation_scores(coeffs, set_like))
    return 1 if votes.mean() > 0 else 2
