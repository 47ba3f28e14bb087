"""Dense symmetric linear algebra and per-set summary statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

PIVOT_TOL = 1e-12
SYMMETRY_TOL = 1e-12


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


class EmptySet(ValueError):
    pass


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray
    dim: int

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


@dataclass(frozen=True)
class SetStatistics:
    """Size, mean and divisor-m scatter of one set of observations."""

    m: int
    mean: np.ndarray
    scatter: np.ndarray


def _as_symmetric(a) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    asym = np.max(np.abs(a - a.T))
    if asym > SYMMETRY_TOL * max(1.0, np.max(np.abs(a))):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    return (a + a.T) / 2


def cholesky(a) -> CholeskyFactor:
    """Lower Cholesky factor of a symmetric matrix.

    Raises NotPositiveDefinite when any pivot (squared diagonal of the
    factor) falls to 1e-12 or below.
    """
    a = _as_symmetric(a)
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(lower) ** 2
    if np.any(~np.isfinite(pivots)) or np.min(pivots) <= PIVOT_TOL:
        raise NotPositiveDefinite(f"pivot {np.min(pivots):.3g} <= {PIVOT_TOL}")
    return CholeskyFactor(lower=lower, dim=a.shape[0])


def log_det_pd(a, factor: CholeskyFactor | None = None) -> float:
    factor = cholesky(a) if factor is None else factor
    return float(2.0 * np.sum(np.log(np.diag(factor.lower))))


def solve_pd(a, b, factor: CholeskyFactor | None = None) -> np.ndarray:
    factor = cholesky(a) if factor is None else factor
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.dim:
        raise ValueError(f"rhs has length {b.shape[0]}, matrix is {factor.dim}x{factor.dim}")
    y = solve_triangular(factor.lower, b, lower=True)
    return solve_triangular(factor.lower.T, y, lower=False)


def inverse_pd(a, factor: CholeskyFactor | None = None) -> np.ndarray:
    factor = cholesky(a) if factor is None else factor
    inv = solve_pd(None, np.eye(factor.dim), factor=factor)
    return (inv + inv.T) / 2


def set_statistics(observations) -> SetStatistics:
    x = np.asarray(observations, dtype=float)
    if x.size == 0:
        raise EmptySet("set has no observations")
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    mean = x.mean(axis=0)
    centered = x - mean
    scatter = centered.T @ centered / m
    return SetStatistics(m=m, mean=mean, scatter=(scatter + scatter.T) / 2)
