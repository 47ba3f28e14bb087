"""Training procedures for covariance-engaged set classifiers.

Plug-in rules estimate the class moments and substitute them into the Bayes
coefficients. CLIPS instead estimates the precision difference by thresholded
CLIME, the linear coefficient by a direct l1 program, and the constant by a
one-parameter logistic fit on a held-out half of the training sets.
"""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from clips import lp
from clips.linalg import cholesky, inverse_pd, log_det_pd, set_statistics
from clips.model import (
    DimensionMismatch,
    DiscriminantCoefficients,
    LabeledSet,
    classify_bayes,
)

log = logging.getLogger(__name__)


class MissingClass(ValueError):
    pass


class InfeasibleColumn(RuntimeError):
    def __init__(self, column: int, lambda1: float):
        super().__init__(f"CLIME column {column} infeasible at lambda={lambda1:g}")
        self.column = column
        self.lambda1 = lambda1


class Infeasible(RuntimeError):
    pass


class NoConvergence(RuntimeError):
    pass


class Method(str, enum.Enum):
    PLUGIN_FULL = "plugin-full"
    PLUGIN_DIAGONAL = "plugin-diag"
    PLUGIN_ENRICHED = "plugin-enriched"
    CLIPS = "clips"


@dataclass(frozen=True)
class ClassMoments:
    set_count: int
    observation_count: int
    prior: float
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class PooledMoments:
    """Per-class moments pooled over all observations, ignoring set membership."""

    class1: ClassMoments
    class2: ClassMoments

    def __getitem__(self, k: int) -> ClassMoments:
        if k == 1:
            return self.class1
        if k == 2:
            return self.class2
        raise KeyError(k)

    @property
    def dim(self) -> int:
        return self.class1.mean.size


@dataclass(frozen=True)
class ClipsHyperparameters:
    clime_lambda: float
    threshold_lambda: float
    beta_lambda: float
    l1_cap: float | None = None
    split_seed: int = 0
    sample_splitting: bool = True

    def __post_init__(self):
        for name in ("clime_lambda", "threshold_lambda", "beta_lambda"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.l1_cap is not None and not self.l1_cap > 0:
            raise ValueError("l1_cap must be positive when given")


@dataclass(frozen=True)
class FittedSetClassifier:
    coefficients: DiscriminantCoefficients
    method: Method
    hyperparameters: ClipsHyperparameters | None = None
    enrich_delta: float | None = None

    def predict(self, set_like) -> int:
        return classify_bayes(self.coefficients, set_like)


def _by_class(training: Sequence[LabeledSet]) -> tuple[list[LabeledSet], list[LabeledSet]]:
    ones = [s for s in training if s.label == 1]
    twos = [s for s in training if s.label == 2]
    if not ones or not twos:
        raise MissingClass("training data must contain sets from both classes")
    return ones, twos


def _class_moments(sets: list[LabeledSet], total_sets: int) -> ClassMoments:
    x = np.vstack([s.sample.observations for s in sets])
    stats = set_statistics(x)
    return ClassMoments(
        set_count=len(sets),
        observation_count=stats.m,
        prior=len(sets) / total_sets,
        mean=stats.mean,
        covariance=stats.scatter,
    )


def pooled_moments(training: Sequence[LabeledSet]) -> PooledMoments:
    ones, twos = _by_class(training)
    dims = {s.sample.dim for s in training}
    if len(dims) != 1:
        raise DimensionMismatch(f"training sets have differing dimensions {sorted(dims)}")
    total = len(ones) + len(twos)
    return PooledMoments(_class_moments(ones, total), _class_moments(twos, total))


def _plugin_coefficients(moments: PooledMoments, cov1, cov2) -> DiscriminantCoefficients:
    f1, f2 = cholesky(cov1), cholesky(cov2)
    prec1, prec2 = inverse_pd(cov1, factor=f1), inverse_pd(cov2, factor=f2)
    mu1, mu2 = moments.class1.mean, moments.class2.mean
    b1, b2 = prec1 @ mu1, prec2 @ mu2
    logdet_ratio = log_det_pd(cov1, factor=f1) - log_det_pd(cov2, factor=f2)
    quad = prec2 - prec1
    return DiscriminantCoefficients(
        prior_log_ratio=np.log(moments.class1.prior / moments.class2.prior),
        constant=(-logdet_ratio - mu1 @ b1 + mu2 @ b2) / 2,
        linear=b1 - b2,
        quadratic=(quad + quad.T) / 2,
    )


def plugin_classifier(
    moments: PooledMoments, variant: Method | str = Method.PLUGIN_FULL, delta: float = 1.0
) -> FittedSetClassifier:
    """Plug the pooled moments into the Bayes coefficients.

    ``plugin-diag`` keeps only the diagonal of each covariance estimate and
    ``plugin-enriched`` adds ``delta`` times the identity.
    """
    variant = Method(variant)
    c1, c2 = moments.class1.covariance, moments.class2.covariance
    if variant is Method.PLUGIN_DIAGONAL:
        c1, c2 = np.diag(np.diag(c1)), np.diag(np.diag(c2))
    elif variant is Method.PLUGIN_ENRICHED:
        if not delta > 0:
            raise ValueError("enrichment delta must be positive")
        eye = np.eye(moments.dim)
        c1, c2 = c1 + delta * eye, c2 + delta * eye
    elif variant is not Method.PLUGIN_FULL:
        raise ValueError(f"{variant.value} is not a plug-in variant")
    return FittedSetClassifier(
        coefficients=_plugin_coefficients(moments, c1, c2),
        method=variant,
        enrich_delta=delta if variant is Method.PLUGIN_ENRICHED else None,
    )


def clime(covariance_estimate, lambda1: float) -> np.ndarray:
    """Column-wise CLIME precision estimate.

    Column j minimizes ||w||_1 subject to ||S w - e_j||_inf <= lambda1, solved
    as an LP in (u, v) >= 0 with w = u - v. The result is not symmetrized.
    """
    if not lambda1 > 0:
        raise ValueError("lambda1 must be positive")
    s = np.atleast_2d(np.asarray(covariance_estimate, dtype=float))
    p = s.shape[0]
    g = np.block([[s, -s], [-s, s]])
    cost = np.ones(2 * p)
    omega = np.empty((p, p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = 1.0
        sol = lp.solve(lp.LpProblem(cost, g, np.concatenate([lambda1 + e, lambda1 - e])))
        if sol.status is not lp.Status.OPTIMAL:
            raise InfeasibleColumn(j, lambda1)
        omega[:, j] = sol.solution[:p] - sol.solution[p:]
    return omega


def threshold_difference(omega1, omega2, threshold_lambda: float) -> np.ndarray:
    """Hard-threshold the precision difference, then symmetrize by smaller magnitude."""
    if not threshold_lambda > 0:
        raise ValueError("threshold_lambda must be positive")
    omega1, omega2 = np.asarray(omega1, dtype=float), np.asarray(omega2, dtype=float)
    if omega1.shape != omega2.shape or omega1.shape[0] != omega1.shape[1]:
        raise DimensionMismatch(f"shapes {omega1.shape} and {omega2.shape} do not match")
    diff = omega2 - omega1
    kept = np.where(np.abs(diff) > threshold_lambda, diff, 0.0)
    a, b = np.abs(kept), np.abs(kept.T)
    # equal magnitudes with opposite signs fall back to the literal minimum
    return np.where(a < b, kept, np.where(a > b, kept.T, np.minimum(kept, kept.T)))


def direct_beta(
    moments: PooledMoments, beta_lambda: float, l1_cap: float | None = None
) -> np.ndarray:
    """Linear coefficient by minimizing ||t1 - t2||_1 under sup-norm moment constraints.

    Variables are t2 (free) and d = t1 - t2 = d+ - d-, so the objective is
    sum(d+ + d-) and the constraints read ||S1 (t2 + d) - mu1||_inf <= lambda
    and ||S2 t2 - mu2||_inf <= lambda.
    """
    if not beta_lambda > 0:
        raise ValueError("beta_lambda must be positive")
    s1, s2 = moments.class1.covariance, moments.class2.covariance
    mu1, mu2 = moments.class1.mean, moments.class2.mean
    if l1_cap is not None:
        return _direct_beta_capped(s1, s2, mu1, mu2, beta_lambda, l1_cap)
    p = moments.dim
    zero = np.zeros((p, p))
    # column order: t2 (free), d+, d-
    rows1 = np.hstack([s1, s1, -s1])
    rows2 = np.hstack([s2, zero, zero])
    g = np.vstack([rows1, -rows1, rows2, -rows2])
    h = np.concatenate([beta_lambda + mu1, beta_lambda - mu1, beta_lambda + mu2, beta_lambda - mu2])
    lb = np.concatenate([np.full(p, -np.inf), np.zeros(2 * p)])
    cost = np.concatenate([np.zeros(p), np.ones(2 * p)])
    sol = lp.solve(lp.LpProblem(cost, g, h, lb))
    if sol.status is not lp.Status.OPTIMAL:
        raise Infeasible(f"direct beta program is {sol.status.value} at lambda={beta_lambda:g}")
    return sol.solution[p : 2 * p] - sol.solution[2 * p :]


def _direct_beta_capped(s1, s2, mu1, mu2, lam, cap) -> np.ndarray:
    p = mu1.size
    eye, zero = np.eye(p), np.zeros((p, p))
    # columns: t1+, t1-, t2+, t2-, t (slack for |t1 - t2|)
    block1 = np.hstack([s1, -s1, zero, zero, zero])
    block2 = np.hstack([zero, zero, s2, -s2, zero])
    diff = np.hstack([eye, -eye, -eye, eye, -eye])
    ndiff = np.hstack([-eye, eye, eye, -eye, -eye])
    cap1 = np.concatenate([np.ones(2 * p), np.zeros(3 * p)])[None, :]
    cap2 = np.concatenate([np.zeros(2 * p), np.ones(2 * p), np.zeros(p)])[None, :]
    g = np.vstack([block1, -block1, block2, -block2, diff, ndiff, cap1, cap2])
    h = np.concatenate(
        [lam + mu1, lam - mu1, lam + mu2, lam - mu2, np.zeros(2 * p), [cap, cap]]
    )
    cost = np.concatenate([np.zeros(4 * p), np.ones(p)])
    sol = lp.solve(lp.LpProblem(cost, g, h))
    if sol.status is not lp.Status.OPTIMAL:
        raise Infeasible(f"capped direct beta program is {sol.status.value} at lambda={lam:g}")
    z = sol.solution
    return (z[:p] - z[p : 2 * p]) - (z[2 * p : 3 * p] - z[3 * p : 4 * p])


@dataclass(frozen=True)
class SetSummaries:
    """Stacked sizes, means, scatters and labels of a list of sets."""

    sizes: np.ndarray
    means: np.ndarray
    scatters: np.ndarray
    labels: np.ndarray

    @classmethod
    def of(cls, sets: Sequence[LabeledSet]) -> "SetSummaries":
        stats = [s.sample.statistics() for s in sets]
        return cls(
            sizes=np.array([st.m for st in stats], dtype=float),
            means=np.array([st.mean for st in stats]),
            scatters=np.array([st.scatter for st in stats]),
            labels=np.array([s.label for s in sets]),
        )

    def partial_scores(self, beta, nabla) -> np.ndarray:
        """b'xbar + xbar'Q xbar/2 + tr(Q S)/2 for every set."""
        quad = np.einsum("ij,jk,ik->i", self.means, nabla, self.means)
        trace = np.einsum("jk,ijk->i", nabla, self.scatters)
        return self.means @ beta + quad / 2 + trace / 2

    def discriminants(self, coeffs: DiscriminantCoefficients) -> np.ndarray:
        return (
            coeffs.prior_log_ratio / self.sizes
            + coeffs.constant
            + self.partial_scores(coeffs.linear, coeffs.quadratic)
        )


def _sigmoid(t):
    return np.exp(-np.logaddexp(0.0, -t))


def beta0_objective(theta0: float, sizes, offsets, labels) -> tuple[float, float, float]:
    """Negative log-likelihood of the constant and its first two derivatives."""
    eta = offsets + sizes * theta0
    value = np.mean(-labels * eta + np.logaddexp(0.0, eta))
    prob = _sigmoid(eta)
    grad = np.mean(sizes * (prob - labels))
    hess = np.mean(sizes**2 * prob * (1.0 - prob))
    return float(value), float(grad), float(hess)


def fit_beta0(
    batch: Sequence[LabeledSet],
    beta,
    nabla,
    prior_estimates: tuple[float, float],
    tol: float = 1e-10,
    max_iter: int = 100,
) -> float:
    """Minimize the one-dimensional logistic likelihood in the constant coefficient.

    Each set contributes the offset log(pi1/pi2) + M_i * (partial discriminant)
    and slope M_i. Newton with step halving from zero; if it stalls the
    monotone gradient is bisected on a bracket grown up to |theta0| = 50.
    """
    return _fit_beta0(SetSummaries.of(batch), beta, nabla, prior_estimates, tol, max_iter)


def _fit_beta0(summaries: SetSummaries, beta, nabla, prior_estimates, tol=1e-10, max_iter=100):
    if not (np.any(summaries.labels == 1) and np.any(summaries.labels == 2)):
        raise MissingClass("the constant fit needs sets from both classes")
    pi1, pi2 = prior_estimates
    sizes = summaries.sizes
    offsets = np.log(pi1 / pi2) + sizes * summaries.partial_scores(
        np.asarray(beta, dtype=float), np.asarray(nabla, dtype=float)
    )
    labels = (summaries.labels == 1).astype(float)

    def obj(t):
        return beta0_objective(t, sizes, offsets, labels)

    theta = 0.0
    value, grad, hess = obj(theta)
    for _ in range(max_iter):
        if abs(grad) <= tol:
            return theta
        if hess <= 1e-300:
            break
        step = grad / hess
        for _ in range(60):
            trial = theta - step
            t_value, t_grad, t_hess = obj(trial)
            if t_value <= value or abs(t_grad) < abs(grad):
                break
            step /= 2
        else:
            break
        theta, value, grad, hess = trial, t_value, t_grad, t_hess
    if abs(grad) <= tol:
        return theta
    return _bisect_beta0(obj, tol)


def _bisect_beta0(obj, tol: float, limit: float = 50.0) -> float:
    lo, hi, width = -1.0, 1.0, 1.0
    while obj(lo)[1] > 0 or obj(hi)[1] < 0:
        width *= 2
        if width > limit:
            raise NoConvergence("no sign change of the likelihood gradient within |theta0| <= 50")
        lo, hi = -width, width
    for _ in range(200):
        mid = (lo + hi) / 2
        g = obj(mid)[1]
        if abs(g) <= tol:
            return mid
        if g > 0:
            hi = mid
        else:
            lo = mid
    raise NoConvergence("bisection failed to reach the gradient tolerance")


def split_batches(
    training: Sequence[LabeledSet], split_seed: int
) -> tuple[list[LabeledSet], list[LabeledSet]]:
    """Random half (floor) of each class's sets to batch one, the rest to batch two."""
    ones, twos = _by_class(training)
    rng = np.random.default_rng(split_seed)
    first, second = [], []
    for group in (ones, twos):
        order = rng.permutation(len(group))
        half = len(group) // 2
        first.extend(group[i] for i in sorted(order[:half]))
        second.extend(group[i] for i in sorted(order[half:]))
    return first, second


def _priors(training) -> tuple[float, float]:
    ones, twos = _by_class(training)
    n = len(ones) + len(twos)
    return len(ones) / n, len(twos) / n


def _assemble(priors, beta0, beta, nabla) -> DiscriminantCoefficients:
    return DiscriminantCoefficients(
        prior_log_ratio=np.log(priors[0] / priors[1]),
        constant=beta0,
        linear=beta,
        quadratic=nabla,
    )


def fit_clips(training: Sequence[LabeledSet], hyper: ClipsHyperparameters) -> FittedSetClassifier:
    """Fit CLIPS at fixed hyperparameters.

    With ``hyper.sample_splitting`` (the default) the precision difference and
    linear coefficient come from a random half of each class's sets and the
    constant from the other half; otherwise every stage uses all sets.
    """
    ones, twos = _by_class(training)
    if len(ones) < 2 or len(twos) < 2:
        raise MissingClass("CLIPS needs at least two training sets per class")
    priors = _priors(training)
    first, second = _batches(training, hyper.sample_splitting, hyper.split_seed)
    moments = pooled_moments(first)
    omega1 = clime(moments.class1.covariance, hyper.clime_lambda)
    omega2 = clime(moments.class2.covariance, hyper.clime_lambda)
    nabla = threshold_difference(omega1, omega2, hyper.threshold_lambda)
    beta = direct_beta(moments, hyper.beta_lambda, hyper.l1_cap)
    beta0 = fit_beta0(second, beta, nabla, priors)
    return FittedSetClassifier(_assemble(priors, beta0, beta, nabla), Method.CLIPS, hyper)


def _batches(training, sample_splitting: bool, split_seed: int):
    if sample_splitting:
        return split_batches(training, split_seed)
    return list(training), list(training)


@dataclass(frozen=True)
class LambdaGrid:
    clime: tuple[float, ...]
    threshold: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self):
        for name in ("clime", "threshold", "beta"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values or min(values) <= 0:
                raise ValueError(f"{name} grid must be nonempty and positive")
            object.__setattr__(self, name, values)

    def __len__(self) -> int:
        return len(self.clime) * len(self.threshold) * len(self.beta)


def theory_rate(p: int, n_sets: int, mean_set_size: float) -> float:
    return float(np.sqrt(np.log(max(p, 2)) / (n_sets * mean_set_size)))


def default_grid(training: Sequence[LabeledSet], points: int = 7) -> LambdaGrid:
    """Log grids spanning x[0.1, 10] around sqrt(log p / (N m0)).

    The threshold grid is additionally scaled by the largest inverse diagonal
    entry of the pooled covariance estimates (at least 1), a proxy for the l1
    operator norm of the precision matrices that sets the CLIME error scale.
    """
    p = training[0].sample.dim
    m0 = float(np.mean([s.sample.m for s in training]))
    rate = theory_rate(p, len(training), m0)
    factors = np.logspace(-1, 1, points)
    moments = pooled_moments(training)
    diag = np.concatenate([np.diag(moments.class1.covariance), np.diag(moments.class2.covariance)])
    scale = max(1.0 / max(float(diag.min()), 1e-12), 1.0)
    return LambdaGrid(
        clime=tuple(rate * factors),
        threshold=tuple(rate * scale * factors),
        beta=tuple(rate * factors),
    )


@dataclass(frozen=True)
class TuningResult:
    hyperparameters: ClipsHyperparameters
    validation_error: float
    classifier: FittedSetClassifier | None
    errors: dict


def validation_error(coeffs: DiscriminantCoefficients, validation) -> float:
    summaries = validation if isinstance(validation, SetSummaries) else SetSummaries.of(validation)
    predicted = np.where(summaries.discriminants(coeffs) > 0, 1, 2)
    return float(np.mean(predicted != summaries.labels))


def tune(
    training: Sequence[LabeledSet],
    validation: Sequence[LabeledSet],
    grid: LambdaGrid | None = None,
    split_seed: int = 0,
    l1_cap: float | None = None,
    sample_splitting: bool = True,
) -> TuningResult:
    """Exhaustive validation search over (clime, threshold, beta) lambdas.

    Cells that fail (infeasible CLIME column or beta program, non-convergent
    constant fit) score error 1.0. Among minimal-error cells the one with the
    largest threshold, then clime, then beta lambda wins.

    CLIME and the beta program are solved once per lambda value and reused
    across the grid, so each cell equals fit_clips at that cell.
    """
    _by_class(training)
    _by_class(validation)
    grid = default_grid(training) if grid is None else grid
    priors = _priors(training)
    first, second = _batches(training, sample_splitting, split_seed)
    moments = pooled_moments(first)
    second_sum = SetSummaries.of(second)
    valid_sum = SetSummaries.of(validation)

    omegas: dict[float, tuple[np.ndarray, np.ndarray] | None] = {}
    for lam in grid.clime:
        try:
            omegas[lam] = (
                clime(moments.class1.covariance, lam),
                clime(moments.class2.covariance, lam),
            )
        except (InfeasibleColumn, lp.IterationLimit) as exc:
            log.debug("clime failed: %s", exc)
            omegas[lam] = None
    betas: dict[float, np.ndarray | None] = {}
    for lam in grid.beta:
        try:
            betas[lam] = direct_beta(moments, lam, l1_cap)
        except (Infeasible, lp.IterationLimit) as exc:
            log.debug("direct beta failed: %s", exc)
            betas[lam] = None

    errors = {}
    fitted = {}
    for lam1, lam_t, lam2 in itertools.product(grid.clime, grid.threshold, grid.beta):
        key = (lam1, lam_t, lam2)
        if omegas[lam1] is None or betas[lam2] is None:
            errors[key] = 1.0
            continue
        nabla = threshold_difference(*omegas[lam1], lam_t)
        try:
            beta0 = _fit_beta0(second_sum, betas[lam2], nabla, priors)
        except NoConvergence:
            errors[key] = 1.0
            continue
        coeffs = _assemble(priors, beta0, betas[lam2], nabla)
        fitted[key] = coeffs
        errors[key] = validation_error(coeffs, valid_sum)

    best = min(errors, key=lambda k: (errors[k], -k[1], -k[0], -k[2]))
    hyper = ClipsHyperparameters(
        clime_lambda=best[0],
        threshold_lambda=best[1],
        beta_lambda=best[2],
        l1_cap=l1_cap,
        split_seed=split_seed,
        sample_splitting=sample_splitting,
    )
    classifier = (
        FittedSetClassifier(fitted[best], Method.CLIPS, hyper) if best in fitted else None
    )
    return TuningResult(hyper, errors[best], classifier, errors)
