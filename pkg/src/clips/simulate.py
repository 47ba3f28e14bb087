"""Synthetic Gaussian set data, Monte Carlo risk, and comparison sweeps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from clips import estimators as est
from clips.linalg import NotPositiveDefinite, cholesky
from clips.model import (
    GaussianClassModel,
    LabeledSet,
    SetSample,
    classify_bayes,
    classify_majority_vote,
    classify_mean_qda,
    oracle_coefficients,
)

log = logging.getLogger(__name__)

MAX_SUPPORT_DRAWS = 100

METHODS = (
    "clips",
    "plugin-diag",
    "plugin-enriched",
    "qda-mv",
    "oracle-bayes",
    "oracle-mean-qda",
)
SWEEP_AXES = ("covariance_signal", "mean_signal", "dimension")


@dataclass(frozen=True)
class ScenarioConfig:
    """Population layout of one simulation scenario.

    ``covariance_signal`` is zeta for scenario 1 and rho for scenarios 2 and 3.
    """

    scenario: int
    dimension: int
    covariance_signal: float
    mean_signal: float = 0.0
    structure_seed: int = 0
    sparse_entry_count: int = 10

    def __post_init__(self):
        if self.scenario not in (1, 2, 3):
            raise ValueError(f"scenario must be 1, 2 or 3, got {self.scenario}")
        if self.dimension < 2:
            raise ValueError("dimension must be at least 2")
        if self.scenario == 1 and self.dimension * (self.dimension - 1) // 2 < self.sparse_entry_count:
            raise ValueError("too few upper-triangular positions for the sparse entries")
        if self.scenario == 2 and self.dimension < 5:
            raise ValueError("scenario 2 needs dimension >= 5 for its leading 5x5 block")
        if self.scenario == 3 and not abs(self.covariance_signal) < 1:
            raise ValueError("scenario 3 needs |rho| < 1")


@dataclass(frozen=True)
class SetSizeDistribution:
    """Set sizes uniform on the integers low..high (a point mass when equal)."""

    low: int
    high: int | None = None

    def __post_init__(self):
        high = self.low if self.high is None else self.high
        if self.low < 1 or high < self.low:
            raise ValueError(f"invalid set size range [{self.low}, {high}]")
        object.__setattr__(self, "high", high)

    @classmethod
    def fixed(cls, m: int) -> "SetSizeDistribution":
        return cls(m, m)

    @property
    def mean(self) -> float:
        return (self.low + self.high) / 2

    def draw(self, rng: np.random.Generator, size=None):
        return rng.integers(self.low, self.high + 1, size=size)


def _means(cov1: np.ndarray, u: float) -> tuple[np.ndarray, np.ndarray]:
    p = cov1.shape[0]
    target = np.zeros(p)
    target[:2] = u
    return cov1 @ target, np.zeros(p)


def scenario_models(config: ScenarioConfig) -> tuple[GaussianClassModel, GaussianClassModel]:
    p, s = config.dimension, config.covariance_signal
    if config.scenario == 1:
        prec1 = (1 + math.sqrt(p)) * np.eye(p)
        cov1 = np.eye(p) / (1 + math.sqrt(p))
        rows, cols = np.triu_indices(p, k=1)
        rng = np.random.default_rng(config.structure_seed)
        for _ in range(MAX_SUPPORT_DRAWS):
            pick = rng.choice(rows.size, size=config.sparse_entry_count, replace=False)
            prec2 = prec1.copy()
            prec2[rows[pick], cols[pick]] = s
            prec2[cols[pick], rows[pick]] = s
            try:
                factor = cholesky(prec2)
            except NotPositiveDefinite:
                continue
            inv_l = np.linalg.inv(factor.lower)
            cov2 = inv_l.T @ inv_l
            break
        else:
            raise NotPositiveDefinite(
                f"no positive-definite support found in {MAX_SUPPORT_DRAWS} draws (zeta={s})"
            )
    elif config.scenario == 2:
        cov2 = np.eye(p)
        cov1 = np.eye(p)
        cov1[:5, :5] = s
        np.fill_diagonal(cov1, 1.0)
    else:
        idx = np.arange(p)
        cov1 = s ** np.abs(idx[:, None] - idx[None, :]) / (1 - s**2)
        cov2 = np.diag(np.diag(cov1))
    mu1, mu2 = _means(cov1, config.mean_signal)
    return (
        GaussianClassModel(0.5, mu1, cov1),
        GaussianClassModel(0.5, mu2, (cov2 + cov2.T) / 2),
    )


def sample_set(model: GaussianClassModel, m: int, rng: np.random.Generator) -> SetSample:
    if m < 1:
        raise ValueError("set size must be at least 1")
    z = rng.standard_normal((m, model.dim))
    return SetSample(model.mean + z @ model.factor.lower.T)


def generate_training(
    models: Sequence[GaussianClassModel],
    n_per_class: int,
    size_dist: SetSizeDistribution,
    rng: np.random.Generator,
) -> list[LabeledSet]:
    if n_per_class < 1:
        raise ValueError("need at least one set per class")
    sizes = size_dist.draw(rng, size=2 * n_per_class)
    labels = [1] * n_per_class + [2] * n_per_class
    return [
        LabeledSet(sample_set(models[label - 1], int(m), rng), label)
        for label, m in zip(labels, sizes)
    ]


def monte_carlo_risk(
    classifier: Callable[[SetSample], int],
    models: Sequence[GaussianClassModel],
    size_dist: SetSizeDistribution,
    reps: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Misclassification frequency over ``reps`` sets drawn from the class mixture."""
    if reps < 100:
        raise ValueError("monte_carlo_risk needs at least 100 replicates")
    class1_prob = models[0].prior
    labels = np.where(rng.random(reps) < class1_prob, 1, 2)
    sizes = size_dist.draw(rng, size=reps)
    wrong = 0
    for label, m in zip(labels, sizes):
        wrong += classifier(sample_set(models[label - 1], int(m), rng)) != label
    risk = wrong / reps
    return risk, math.sqrt(risk * (1 - risk) / reps)


def oracle_rules(models) -> dict[str, Callable[[SetSample], int]]:
    coeffs = oracle_coefficients(*models)
    return {
        "oracle-bayes": lambda s: classify_bayes(coeffs, s),
        "oracle-mean-qda": lambda s: classify_mean_qda(models[0], models[1], s),
        "oracle-majority-vote": lambda s: classify_majority_vote(coeffs, s),
    }


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: int
    dimension: int
    covariance_signal: float
    mean_signal: float
    sweep_axis: str
    sweep_values: tuple
    sets_per_class: int = 7
    set_size: SetSizeDistribution = field(default_factory=lambda: SetSizeDistribution.fixed(10))
    replicate_count: int = 10
    test_sets_per_class: int = 50
    tune_sets_per_class: int | None = None
    master_seed: int = 0
    structure_seed: int = 0
    methods: tuple = METHODS
    grid_points: int = 7
    enrich_delta: float = 1.0
    sample_splitting: bool = True

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep_axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}")
        if not self.sweep_values:
            raise ValueError("sweep_values must be nonempty")
        if self.replicate_count < 1:
            raise ValueError("replicate_count must be at least 1")
        if self.sets_per_class < 2:
            raise ValueError("sets_per_class must be at least 2")
        if self.test_sets_per_class < 1:
            raise ValueError("test_sets_per_class must be at least 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        object.__setattr__(self, "methods", tuple(self.methods))

    def scenario_at(self, value) -> ScenarioConfig:
        base = ScenarioConfig(
            self.scenario,
            self.dimension,
            self.covariance_signal,
            self.mean_signal,
            self.structure_seed,
        )
        if self.sweep_axis == "dimension":
            value = int(value)
        return replace(base, **{self.sweep_axis: value})


@dataclass(frozen=True)
class ResultRow:
    swept_value: float
    method: str
    mean_error: float
    std_error: float
    replicates: int


@dataclass
class ResultTable:
    rows: list[ResultRow]
    errors: dict = field(default_factory=dict, repr=False)

    HEADER = ("swept_value", "method", "mean_error", "std_error", "replicates")

    def to_csv(self) -> str:
        lines = [",".join(self.HEADER)]
        for r in self.rows:
            lines.append(
                f"{r.swept_value!r},{r.method},{r.mean_error!r},{r.std_error!r},{r.replicates}"
            )
        return "\n".join(lines) + "\n"

    def row(self, swept_value, method) -> ResultRow:
        for r in self.rows:
            if r.swept_value == swept_value and r.method == method:
                return r
        raise KeyError((swept_value, method))


def replicate_rng(master_seed: int, sweep_index: int, replicate_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, sweep_index, replicate_index]))


def _test_error(rule, test_sets) -> float:
    return float(np.mean([rule(s.sample) != s.label for s in test_sets]))


def run_replicate(config: ExperimentConfig, models, rng: np.random.Generator) -> dict[str, float]:
    """Fit every requested method on fresh train/tune/test data; NaN marks a failure."""
    n_tune = config.tune_sets_per_class or config.sets_per_class
    train = generate_training(models, config.sets_per_class, config.set_size, rng)
    tune_sets = generate_training(models, n_tune, config.set_size, rng)
    test = generate_training(models, config.test_sets_per_class, config.set_size, rng)
    split_seed = int(rng.integers(2**31))
    out: dict[str, float] = {}

    clips_coeffs = None
    if {"clips", "qda-mv"} & set(config.methods):
        try:
            grid = est.default_grid(train, points=config.grid_points)
            result = est.tune(
                train,
                tune_sets,
                grid,
                split_seed=split_seed,
                sample_splitting=config.sample_splitting,
            )
            if result.classifier is not None:
                clips_coeffs = result.classifier.coefficients
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            log.warning("clips fit failed: %s", exc)

    moments = est.pooled_moments(train)
    oracle = oracle_coefficients(*models)
    for method in config.methods:
        try:
            if method == "clips":
                rule = None if clips_coeffs is None else (lambda s, c=clips_coeffs: classify_bayes(c, s))
            elif method == "qda-mv":
                rule = (
                    None
                    if clips_coeffs is None
                    else (lambda s, c=clips_coeffs: classify_majority_vote(c, s))
                )
            elif method in ("plugin-diag", "plugin-enriched"):
                clf = est.plugin_classifier(moments, method, delta=config.enrich_delta)
                rule = lambda s, c=clf.coefficients: classify_bayes(c, s)
            elif method == "oracle-bayes":
                rule = lambda s: classify_bayes(oracle, s)
            else:
                rule = lambda s: classify_mean_qda(models[0], models[1], s)
            out[method] = math.nan if rule is None else _test_error(rule, test)
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            log.warning("%s failed: %s", method, exc)
            out[method] = math.nan
    return out


def run_experiment(config: ExperimentConfig, progress: Callable[[str], None] | None = None) -> ResultTable:
    errors: dict[tuple, list[float]] = {}
    rows = []
    for si, value in enumerate(config.sweep_values):
        models = scenario_models(config.scenario_at(value))
        cell = {m: [] for m in config.methods}
        for r in range(config.replicate_count):
            res = run_replicate(config, models, replicate_rng(config.master_seed, si, r))
            for m in config.methods:
                cell[m].append(res[m])
            if progress is not None:
                progress(f"{config.sweep_axis}={value} replicate {r + 1}/{config.replicate_count}")
        for m in config.methods:
            vals = np.array(cell[m])
            errors[(value, m)] = list(vals)
            ok = vals[np.isfinite(vals)]
            mean = float(ok.mean()) if ok.size else math.nan
            se = float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else 0.0
            rows.append(ResultRow(value, m, mean, se, int(ok.size)))
    return ResultTable(rows, errors)
