"""Command-line entry point: train, predict, simulate and risk subcommands.

Exit codes are 0 on success, 2 for bad input (malformed files, invalid
configuration, dimension mismatches) and 3 when an estimation step fails.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from clips import estimators as est
from clips import lp
from clips import simulate as sim
from clips.linalg import NotPositiveDefinite
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
    observation_scores,
    oracle_coefficients,
)

FORMAT_VERSION = 1
TRAIN_METHODS = ("clips", "plugin-full", "plugin-diag", "plugin-enriched", "qda-mv")
# failing stage named in the exit-3 message
ESTIMATION_STAGES = {
    NotPositiveDefinite: "covariance factorization",
    est.InfeasibleColumn: "clime",
    est.Infeasible: "direct beta",
    est.NoConvergence: "constant fit",
    lp.IterationLimit: "linear program",
}
ESTIMATION_ERRORS = tuple(ESTIMATION_STAGES)

log = logging.getLogger("clips")


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


class EstimationError(Exception):
    """A fitting stage failed; maps to exit code 3."""


# files


def write_atomic(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclasses.dataclass(frozen=True)
class SetRecord:
    set_id: str
    label: int | None
    sample: SetSample


def read_sets(path) -> list[SetRecord]:
    """Parse a ``set_id,label,f1..fp`` file, keeping sets in first-seen order."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["set_id", "label"] or len(header) < 3:
        raise InputError(f"{path}: header must start with set_id,label and name at least one feature")
    p = len(header) - 2
    obs: dict[str, list] = {}
    labels: dict[str, int | None] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != p + 2:
            raise InputError(f"{path}:{lineno}: expected {p + 2} fields, found {len(row)}")
        sid, raw_label = row[0].strip(), row[1].strip()
        if raw_label == "":
            label = None
        elif raw_label in ("1", "2"):
            label = int(raw_label)
        else:
            raise InputError(f"{path}:{lineno}: label must be 1, 2 or empty, got {raw_label!r}")
        try:
            x = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
        if not all(math.isfinite(v) for v in x):
            raise InputError(f"{path}:{lineno}: non-finite feature value")
        if sid in labels and labels[sid] != label:
            raise InputError(f"{path}:{lineno}: set {sid!r} has conflicting labels")
        labels[sid] = label
        obs.setdefault(sid, []).append(x)
    if not obs:
        raise InputError(f"{path}: no observations")
    return [SetRecord(sid, labels[sid], SetSample(np.array(rows_))) for sid, rows_ in obs.items()]


def labeled_sets(records: list[SetRecord], path) -> list[LabeledSet]:
    missing = [r.set_id for r in records if r.label is None]
    if missing:
        raise InputError(f"{path}: training sets need labels (first unlabeled: {missing[0]!r})")
    return [LabeledSet(r.sample, r.label) for r in records]


# model files


def model_to_dict(
    coeffs: DiscriminantCoefficients,
    method: str,
    hyperparameters: est.ClipsHyperparameters | None = None,
    enrich_delta: float | None = None,
) -> dict:
    q = coeffs.quadratic
    # signed zeros are kept so the round trip stays bit-exact
    upper = np.triu(np.ones(q.shape, dtype=bool))
    rows, cols = np.nonzero(upper & ((q != 0) | np.signbit(q)))
    return {
        "format_version": FORMAT_VERSION,
        "method": method,
        "dimension": coeffs.dim,
        "prior_log_ratio": coeffs.prior_log_ratio,
        "constant": coeffs.constant,
        "linear": [float(v) for v in coeffs.linear],
        "quadratic": [[int(i), int(j), float(q[i, j])] for i, j in zip(rows, cols)],
        "hyperparameters": None if hyperparameters is None else dataclasses.asdict(hyperparameters),
        "enrich_delta": enrich_delta,
    }


def model_from_dict(doc: dict) -> tuple[DiscriminantCoefficients, str]:
    try:
        if doc["format_version"] != FORMAT_VERSION:
            raise InputError(f"unsupported model format_version {doc['format_version']!r}")
        method = doc["method"]
        if method not in TRAIN_METHODS:
            raise InputError(f"unknown model method {method!r}")
        p = int(doc["dimension"])
        q = np.zeros((p, p))
        for i, j, v in doc["quadratic"]:
            q[i, j] = q[j, i] = v
        coeffs = DiscriminantCoefficients(
            prior_log_ratio=float(doc["prior_log_ratio"]),
            constant=float(doc["constant"]),
            linear=np.array(doc["linear"], dtype=float),
            quadratic=q,
        )
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise InputError(f"malformed model file: {exc!r}") from exc
    return coeffs, method


def save_model(path, coeffs, method, hyperparameters=None, enrich_delta=None) -> None:
    doc = model_to_dict(coeffs, method, hyperparameters, enrich_delta)
    write_atomic(path, json.dumps(doc, indent=1) + "\n")


def load_model(path) -> tuple[DiscriminantCoefficients, str]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read model {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"model file {path} is not a mapping")
    return model_from_dict(doc)


# experiment configs


def _set_size(value) -> sim.SetSizeDistribution:
    if isinstance(value, int):
        return sim.SetSizeDistribution.fixed(value)
    if isinstance(value, dict) and set(value) <= {"low", "high"} and "low" in value:
        return sim.SetSizeDistribution(int(value["low"]), value.get("high"))
    raise ValueError("expected an integer or a mapping with low/high")


def experiment_from_dict(doc) -> sim.ExperimentConfig:
    if not isinstance(doc, dict):
        raise InputError("experiment config must be a mapping of ExperimentConfig fields")
    fields = {f.name: f for f in dataclasses.fields(sim.ExperimentConfig)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise InputError(f"unknown config field {unknown[0]!r}")
    for name, f in fields.items():
        has_default = f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING
        if not has_default and name not in doc:
            raise InputError(f"config field {name!r} is required")
    kwargs = dict(doc)
    for name, value in doc.items():
        try:
            if name == "set_size":
                kwargs[name] = _set_size(value)
            elif name in ("sweep_values", "methods"):
                if not isinstance(value, (list, tuple)):
                    raise ValueError("expected a list")
                kwargs[name] = tuple(value)
        except (TypeError, ValueError) as exc:
            raise InputError(f"config field {name!r}: {exc}") from exc
    try:
        config = sim.ExperimentConfig(**kwargs)
        config.scenario_at(config.sweep_values[0])
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from exc
    return config


def load_experiment(path) -> sim.ExperimentConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    return experiment_from_dict(doc)


# commands


def _clips_lambdas(args):
    given = [args.clime_lambda, args.threshold_lambda, args.beta_lambda]
    if all(v is None for v in given):
        return None
    if any(v is None for v in given):
        raise InputError("--clime-lambda, --threshold-lambda and --beta-lambda go together")
    return given


def _tune_holdout(sets: list[LabeledSet], fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    train, valid = [], []
    for label in (1, 2):
        group = [s for s in sets if s.label == label]
        order = rng.permutation(len(group))
        k = int(round(fraction * len(group)))
        if k < 1 or len(group) - k < 2:
            raise InputError(f"class {label} has too few sets to hold out a tuning fraction of {fraction}")
        valid.extend(group[i] for i in sorted(order[:k]))
        train.extend(group[i] for i in sorted(order[k:]))
    return train, valid


def fit_from_args(sets: list[LabeledSet], args):
    """Returns (coefficients, hyperparameters, enrich_delta)."""
    method = args.method
    if method in ("clips", "qda-mv"):
        lambdas = _clips_lambdas(args)
        if lambdas is not None:
            hyper = est.ClipsHyperparameters(
                *lambdas, split_seed=args.split_seed, sample_splitting=not args.no_sample_splitting
            )
            clf = est.fit_clips(sets, hyper)
            return clf.coefficients, hyper, None
        train, valid = _tune_holdout(sets, args.tune_split, args.seed)
        result = est.tune(
            train, valid, split_seed=args.split_seed, sample_splitting=not args.no_sample_splitting
        )
        if result.classifier is None:
            raise EstimationError("tune: every grid cell failed")
        log.info("tuned validation error %.4f", result.validation_error)
        return result.classifier.coefficients, result.hyperparameters, None
    clf = est.plugin_classifier(est.pooled_moments(sets), method, delta=args.enrich_delta)
    return clf.coefficients, None, clf.enrich_delta


def cmd_train(args) -> int:
    sets = labeled_sets(read_sets(args.data), args.data)
    try:
        coeffs, hyper, delta = fit_from_args(sets, args)
    except est.MissingClass as exc:
        raise InputError(str(exc)) from exc
    except ESTIMATION_ERRORS as exc:
        stage = ESTIMATION_STAGES[type(exc)]
        raise EstimationError(f"{stage} stage: {type(exc).__name__}: {exc}") from exc
    save_model(args.out, coeffs, args.method, hyper, delta)
    support = int(np.count_nonzero(np.triu(coeffs.quadratic)))
    print(
        f"method={args.method} beta_nonzero={int(np.count_nonzero(coeffs.linear))} "
        f"nabla_support={support} beta0={coeffs.constant:.6g}"
    )
    return 0


def predict_records(coeffs, method, records):
    out = []
    for r in records:
        if r.sample.dim != coeffs.dim:
            raise InputError(f"set {r.set_id!r} has {r.sample.dim} features, model expects {coeffs.dim}")
        if method == "qda-mv":
            # the vote margin plays the role of g so its sign still matches the label
            g = float(np.mean(np.sign(observation_scores(coeffs, r.sample))))
            label = classify_majority_vote(coeffs, r.sample)
        else:
            g = discriminant_g(coeffs, r.sample)
            label = classify_bayes(coeffs, r.sample)
        out.append((r.set_id, label, g))
    return out


def cmd_predict(args) -> int:
    coeffs, method = load_model(args.model)
    rows = predict_records(coeffs, method, read_sets(args.data))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["set_id", "predicted_label", "g_value"])
    for sid, label, g in rows:
        writer.writerow([sid, label, repr(g)])
    write_atomic(args.out, buf.getvalue())
    return 0


def cmd_simulate(args) -> int:
    config = load_experiment(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    progress = (lambda msg: print(msg, file=sys.stderr)) if args.progress else None
    table = sim.run_experiment(config, progress=progress)
    write_atomic(args.out, table.to_csv())
    return 0


def _population(args):
    if args.population is not None:
        try:
            doc = yaml.safe_load(Path(args.population).read_text(encoding="utf-8"))
            models = tuple(
                GaussianClassModel(
                    float(doc[k]["prior"]),
                    np.array(doc[k]["mean"], dtype=float),
                    np.array(doc[k]["covariance"], dtype=float),
                )
                for k in ("class1", "class2")
            )
        except (OSError, yaml.YAMLError, KeyError, TypeError, ValueError, NotPositiveDefinite) as exc:
            raise InputError(f"invalid population file {args.population}: {exc!r}") from exc
        if abs(models[0].prior + models[1].prior - 1) > 1e-9:
            raise InputError("class priors must sum to one")
        if models[0].dim != models[1].dim:
            raise InputError("class dimensions differ")
        return models
    if args.scenario is None:
        raise InputError("give either --population FILE or --scenario with --dimension")
    try:
        return sim.scenario_models(
            sim.ScenarioConfig(
                args.scenario,
                args.dimension,
                args.covariance_signal,
                args.mean_signal,
                args.structure_seed,
            )
        )
    except (ValueError, NotPositiveDefinite) as exc:
        raise InputError(f"invalid scenario: {exc}") from exc


def _positive_ints(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("set sizes must be positive integers")
    return values


def cmd_risk(args) -> int:
    if args.reps < 100:
        raise InputError("--reps must be at least 100")
    models = _population(args)
    coeffs = oracle_coefficients(*models)
    rules = {
        "oracle-bayes": lambda s: classify_bayes(coeffs, s),
        "mean-qda": lambda s: classify_mean_qda(models[0], models[1], s),
        "majority-vote": lambda s: classify_majority_vote(coeffs, s),
    }
    print("m,method,risk,std_error")
    for m in args.m:
        for name, rule in rules.items():
            # every rule sees the same test sets for a given m
            rng = np.random.default_rng(np.random.SeedSequence([args.seed, m]))
            risk, se = sim.monte_carlo_risk(rule, models, sim.SetSizeDistribution.fixed(m), args.reps, rng)
            print(f"{m},{name},{risk:.6f},{se:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clips", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit a set classifier from a data file")
    train.add_argument("data", help="CSV with set_id, label, features")
    train.add_argument("--method", choices=TRAIN_METHODS, default="clips")
    train.add_argument("--clime-lambda", type=float, help="CLIME constraint level")
    train.add_argument("--threshold-lambda", type=float, help="threshold on the precision difference")
    train.add_argument("--beta-lambda", type=float, help="constraint level of the linear-term LP")
    train.add_argument("--enrich-delta", type=float, default=1.0, help="ridge added by plugin-enriched")
    train.add_argument(
        "--tune-split",
        type=float,
        default=0.3,
        help="fraction of each class held out for tuning when no lambdas are given",
    )
    train.add_argument("--no-sample-splitting", action="store_true", help="fit both stages on all sets")
    train.add_argument("--seed", type=int, required=True, help="seed for the tuning holdout")
    train.add_argument("--split-seed", type=int, default=0, help="seed for the two-stage split")
    train.add_argument("--out", required=True)
    train.set_defaults(func=cmd_train)

    predict = sub.add_parser("predict", help="classify the sets in a data file")
    predict.add_argument("model")
    predict.add_argument("data")
    predict.add_argument("--out", required=True)
    predict.set_defaults(func=cmd_predict)

    simulate = sub.add_parser("simulate", help="run a simulation sweep from a config file")
    simulate.add_argument("config")
    simulate.add_argument("--seed", type=int, help="override master_seed")
    simulate.add_argument("--out", required=True)
    simulate.add_argument("--progress", action="store_true")
    simulate.set_defaults(func=cmd_simulate)

    risk = sub.add_parser("risk", help="Monte Carlo risk of the oracle rules")
    risk.add_argument("--population", help="YAML/JSON file with class1/class2 prior, mean, covariance")
    risk.add_argument("--scenario", type=int, choices=(1, 2, 3))
    risk.add_argument("--dimension", type=int, default=100)
    risk.add_argument("--covariance-signal", type=float, default=0.5)
    risk.add_argument("--mean-signal", type=float, default=0.0)
    risk.add_argument("--structure-seed", type=int, default=0)
    risk.add_argument("--m", type=_positive_ints, default=[1, 2, 4, 8], help="comma-separated set sizes")
    risk.add_argument("--reps", type=int, default=10000)
    risk.add_argument("--seed", type=int, required=True)
    risk.set_defaults(func=cmd_risk)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (InputError, DimensionMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
