"""Count how often the tuned CLIPS quadratic support stays inside the true one.

Scenario 1 with p=50, zeta=0.55, u=0, 50 training and 50 validation sets per
class of size 10. Prints per-replicate false positives and the selected
hyperparameters so the tuning behaviour can be inspected.
"""

import argparse

import numpy as np

from clips import estimators as est
from clips import simulate as sim
from clips.model import oracle_coefficients


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--replicates", type=int, default=50)
    parser.add_argument("--no-sample-splitting", action="store_true")
    args = parser.parse_args()

    models = sim.scenario_models(sim.ScenarioConfig(1, 50, 0.55, 0.0, structure_seed=0))
    truth = np.abs(oracle_coefficients(*models).quadratic) > 1e-12
    size = sim.SetSizeDistribution.fixed(10)
    contained = 0
    print("replicate,false_positives,true_positives,clime_lambda,threshold_lambda,beta_lambda,validation_error")
    for r in range(args.replicates):
        rng = sim.replicate_rng(8, 0, r)
        training = sim.generate_training(models, 50, size, rng)
        validation = sim.generate_training(models, 50, size, rng)
        result = est.tune(training, validation, split_seed=r, sample_splitting=not args.no_sample_splitting)
        support = result.classifier.coefficients.quadratic != 0
        fp, tp = int(np.sum(support & ~truth)), int(np.sum(support & truth))
        contained += fp == 0
        h = result.hyperparameters
        print(
            f"{r},{fp},{tp},{h.clime_lambda:.4g},{h.threshold_lambda:.4g},{h.beta_lambda:.4g},"
            f"{result.validation_error:.3f}"
        )
    print(f"# contained in {contained}/{args.replicates}")


if __name__ == "__main__":
    main()
