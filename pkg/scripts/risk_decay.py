"""Tabulate the Bayes set risk of the unit location model against set size.

With class means +1 and -1 and unit variance the risk at set size m is
Phi(-sqrt(m)); the script prints the Monte Carlo estimate next to it.
"""

import argparse

import numpy as np
from scipy.stats import norm

from clips import simulate as sim
from clips.model import GaussianClassModel, classify_bayes, oracle_coefficients


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--m", default="1,2,4,8,16")
    parser.add_argument("--reps", type=int, default=100_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    models = (
        GaussianClassModel(0.5, np.array([1.0]), np.eye(1)),
        GaussianClassModel(0.5, np.array([-1.0]), np.eye(1)),
    )
    coeffs = oracle_coefficients(*models)
    rng = np.random.default_rng(args.seed)
    print("m,risk,std_error,exact")
    for m in (int(v) for v in args.m.split(",")):
        risk, se = sim.monte_carlo_risk(
            lambda s: classify_bayes(coeffs, s), models, sim.SetSizeDistribution.fixed(m), args.reps, rng
        )
        print(f"{m},{risk:.5f},{se:.5f},{norm.cdf(-np.sqrt(m)):.5f}")


if __name__ == "__main__":
    main()
