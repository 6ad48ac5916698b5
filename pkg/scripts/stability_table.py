"""Tail variance by algorithm and step size on the Wisconsin data (or its surrogate).

Prints an algorithm-by-step-size table; ``inf`` marks divergence.

    python scripts/stability_table.py --out results/stability
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from kiplmc.cli import expand_configs
from kiplmc.harness import group_records, persist, read_config_file, run_grid

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "wisconsin_stability.toml"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(DEFAULT))
    parser.add_argument("--out", required=True)
    parser.add_argument("--steps", type=int, help="override n_steps")
    args = parser.parse_args()

    doc = read_config_file(args.config)
    if args.steps:
        doc["n_steps"] = args.steps
        doc["tail_window"] = min(doc.get("tail_window", 500), args.steps)
    records = run_grid(expand_configs(doc))
    out = Path(args.out)
    persist(records, out)

    cells = {}
    for cfg, recs in group_records(records):
        cells[cfg.algorithm, cfg.eta] = float(np.mean([np.mean(r.tail_variance()) for r in recs]))
    algs = list(dict.fromkeys(a for a, _ in cells))
    etas = sorted({e for _, e in cells})
    with open(out / "stability.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", *etas])
        for a in algs:
            w.writerow([a, *(repr(cells[a, e]) for e in etas)])
    print("eta".ljust(10) + "".join(f"{e:>12g}" for e in etas))
    for a in algs:
        print(a.ljust(10) + "".join(f"{cells[a, e]:>12.2e}" for e in etas))


if __name__ == "__main__":
    main()
