"""Tail variance of theta against the number of particles, with a log-log slope fit.

    python scripts/variance_vs_n.py --out results/variance --steps 3000
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from kiplmc.cli import expand_configs
from kiplmc.harness import group_records, persist, read_config_file, run_grid

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "fig2b_variance_vs_n.toml"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(DEFAULT))
    parser.add_argument("--out", required=True)
    parser.add_argument("--steps", type=int, help="override n_steps")
    parser.add_argument("--replicates", type=int, help="override n_replicates")
    args = parser.parse_args()

    doc = read_config_file(args.config)
    if args.steps:
        doc["n_steps"] = args.steps
        doc["tail_window"] = min(doc.get("tail_window", 500), args.steps)
    if args.replicates:
        doc["n_replicates"] = args.replicates
    records = run_grid(expand_configs(doc))
    out = Path(args.out)
    persist(records, out)

    table: dict[str, list[tuple[int, float]]] = {}
    for cfg, recs in group_records(records):
        var = float(np.mean([r.tail_variance() for r in recs]))
        table.setdefault(cfg.algorithm, []).append((cfg.N, var))
    with open(out / "variance_vs_n.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "N", "tail_variance", "variance_times_n"])
        for alg, rows in table.items():
            for n, v in rows:
                w.writerow([alg, n, repr(v), repr(v * n)])
            ns, vs = np.array(rows).T
            slope = np.polyfit(np.log(ns), np.log(vs), 1)[0]
            print(f"{alg:8s} slope {slope:+.3f}  "
                  + "  ".join(f"N={int(n)}:{v:.2e}" for n, v in rows))


if __name__ == "__main__":
    main()
