"""Strong discretisation error of the kinetic schemes against a fine-step reference.

Coarse schemes and a fine Euler-Maruyama reference are driven by one Brownian path;
the matched-replicate RMSE at time T estimates W2 between the laws.

    python scripts/discretisation.py --out results/discretisation
"""

import argparse
import csv
import math
from pathlib import Path

import numpy as np

from kiplmc.integrators import initialize_state, simulate_coupled
from kiplmc.models import GaussianHierarchicalModel


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True)
    parser.add_argument("--N", type=int, default=5)
    parser.add_argument("--gamma", type=float, default=2.0)
    parser.add_argument("--time", type=float, default=1.0)
    parser.add_argument("--fine-eta", type=float, default=1e-4)
    parser.add_argument("--replicates", type=int, default=256)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    model = GaussianHierarchicalModel([0.5, -1.0])
    etas = (0.2, 0.1, 0.05, 0.025)
    algs = ("KIPLMC1", "KIPLMC2")
    init = initialize_state(2, 2, args.N, theta0=[2.0, 2.0], seed=0,
                            batch_shape=(args.replicates,))
    ref, states = simulate_coupled(init, model, args.gamma, args.time,
                                   [(a, e) for a in algs for e in etas],
                                   fine_eta=args.fine_eta, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "discretisation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "eta", "w2"])
        for a in algs:
            errs = []
            for e in etas:
                s = states[a, e]
                sq = (np.sum((s.theta - ref.theta) ** 2, axis=-1)
                      + np.sum((s.latents - ref.latents) ** 2, axis=(-2, -1)))
                errs.append(math.sqrt(np.mean(sq)))
                w.writerow([a, e, repr(errs[-1])])
            order = np.polyfit(np.log(etas), np.log(errs), 1)[0]
            print(f"{a:8s} " + "  ".join(f"eta={e}:{x:.3e}" for e, x in zip(etas, errs))
                  + f"  observed order {order:.2f}")


if __name__ == "__main__":
    main()
