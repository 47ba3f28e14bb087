"""Regenerate the bundled scenario-2 sample data file.

Scenario 2 with p=20, rho=0.8, u=0: 80 sets of 10 observations per class.
"""

import argparse
from pathlib import Path

import numpy as np

from clips import simulate as sim

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "clips" / "data" / "scenario2_sample.csv"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args()

    p = 20
    models = sim.scenario_models(sim.ScenarioConfig(2, p, 0.8, 0.0))
    sets = sim.generate_training(models, 80, sim.SetSizeDistribution.fixed(10), np.random.default_rng(args.seed))
    lines = ["set_id,label," + ",".join(f"f{k + 1}" for k in range(p))]
    for i, s in enumerate(sets):
        for row in s.sample.observations:
            lines.append(f"set{i:03d},{s.label}," + ",".join(f"{v:.6f}" for v in row))
    args.out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(sets)} sets to {args.out}")


if __name__ == "__main__":
    main()
