"""Command-line front end: ``kiplmc {run,compare,sweep,check-model,bounds}``.

A config document is an ExperimentConfig mapping (JSON or TOML).  ``algorithm``,
``N``, ``eta`` and ``gamma`` may be lists, and a ``sweep`` table may list values for
the same keys; lists expand to their cross product.  Extra top-level tables:
``theta_star`` (target for ``compare`` when the model has none) and ``bounds``
(``mu``, ``lip``, ``init_moment`` overrides for ``bounds``).

Exit codes: 0 success (divergence is a result, not a failure), 1 config or usage
error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .analysis import (TheoryBoundParams, abc_metric, bound_kiplmc1, bound_kiplmc2,
                       concentration_bound, gaussian_init_moment)
from .datasets import DatasetError
from .harness import (ConfigError, ExperimentConfig, apply_override, build_model,
                      group_records, parse_override, persist, read_config_file,
                      replicate_error_curve, run_grid, summarize, theta_star_of)
from .models import GaussianHierarchicalModel, check_assumptions

EXPANDABLE = ("algorithm", "N", "eta", "gamma")
EXTRA_KEYS = ("sweep", "theta_star", "bounds")


class UsageError(ValueError):
    pass


def _sci(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{x:.2e}"


def load_document(args) -> dict:
    doc = read_config_file(args.config)
    for text in args.override or []:
        key, value = parse_override(text)
        if key.split(".")[0] in EXTRA_KEYS:
            apply_extra(doc, key, value)
        else:
            apply_override(doc, key, value)
    if args.replicates is not None:
        doc["n_replicates"] = args.replicates
    if args.seed is not None:
        doc["seed"] = args.seed
    return doc


def apply_extra(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    target = doc
    for p in parts[:-1]:
        target = target.setdefault(p, {})
    target[parts[-1]] = value


def expand_configs(doc: dict) -> list[ExperimentConfig]:
    """Cross product over list-valued ``algorithm``/``N``/``eta``/``gamma`` and the
    ``sweep`` table, in the order algorithm, N, eta, gamma."""
    base = {k: v for k, v in doc.items() if k not in EXTRA_KEYS}
    axes = {}
    for key in EXPANDABLE:
        if isinstance(base.get(key), list):
            axes[key] = base.pop(key)
    for key, values in (doc.get("sweep") or {}).items():
        if key not in EXPANDABLE:
            raise ConfigError(f"sweep over unsupported field {key!r}")
        axes[key] = list(values) if isinstance(values, list) else [values]
        base.pop(key, None)
    keys = [k for k in EXPANDABLE if k in axes]
    out = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        data = dict(base)
        data.update(zip(keys, combo))
        out.append(ExperimentConfig.from_dict(data))
    return out


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _print_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    print("  ".join(str(h).rjust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(str(c).rjust(w) for c, w in zip(r, widths)))


def _check_failures(records) -> None:
    for r in records:
        if r.error is not None:
            print(f"cell {r.config.algorithm} N={r.config.N} eta={r.config.eta} "
                  f"replicate {r.replicate} failed: {r.error}", file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

SUMMARY_HEADER = ["algorithm", "N", "eta", "gamma", "n_replicates", "n_diverged",
                  "rmse_final", "tail_variance_mean"]


def cmd_run(args) -> int:
    configs = expand_configs(load_document(args))
    records = run_grid(configs)
    _check_failures(records)
    out = Path(args.out)
    persist(records, out)
    summaries = [summarize(cfg, recs) for cfg, recs in group_records(records)]
    rows = [[s[k] for k in SUMMARY_HEADER] for s in summaries]
    _write_csv(out / "summary.csv", SUMMARY_HEADER, rows)
    _print_table(["algorithm", "N", "eta", "gamma", "rmse_final", "tail_var", "diverged"],
                 [[s["algorithm"], s["N"], s["eta"], s["gamma"], _sci(s["rmse_final"]),
                   _sci(s["tail_variance_mean"]), f"{s['n_diverged']}/{s['n_replicates']}"]
                  for s in summaries])
    return 0


def cmd_sweep(args) -> int:
    configs = expand_configs(load_document(args))
    records = run_grid(configs)
    _check_failures(records)
    out = Path(args.out)
    persist(records, out)
    header = ["algorithm", "N", "eta", "gamma", "replicate", "tail_variance_mean",
              "rmse_final", "diverged"]
    rows = []
    for cfg, recs in group_records(records):
        model, _ = build_model(cfg.model_spec)
        star = theta_star_of(model)
        for r in recs:
            tv = float(np.mean(r.tail_variance()))
            rmse = math.nan
            if star is not None and not r.diverged and r.error is None:
                rmse = float(np.linalg.norm(r.theta_trajectory[-1] - star))
            rows.append([cfg.algorithm, cfg.N, cfg.eta, cfg.gamma, r.replicate, tv, rmse,
                         int(r.diverged)])
    _write_csv(out / "sweep.csv", header, rows)
    summaries = [summarize(cfg, recs) for cfg, recs in group_records(records)]
    _print_table(["algorithm", "N", "eta", "gamma", "tail_var", "diverged"],
                 [[s["algorithm"], s["N"], s["eta"], s["gamma"], _sci(s["tail_variance_mean"]),
                   f"{s['n_diverged']}/{s['n_replicates']}"] for s in summaries])
    return 0


def cmd_compare(args) -> int:
    doc = load_document(args)
    configs = expand_configs(doc)
    if len(configs) != 2:
        raise UsageError(f"compare needs exactly two cells, config expands to {len(configs)}")
    model, _ = build_model(configs[0].model_spec)
    star = doc.get("theta_star")
    star = theta_star_of(model) if star is None else np.atleast_1d(np.asarray(star, dtype=float))
    if star is None:
        raise UsageError("compare needs a known theta_star (analytic or in the config)")
    if star.shape != (model.spec.d_theta,):
        raise UsageError(f"theta_star has {star.size} entries, model has d_theta="
                         f"{model.spec.d_theta}")
    records = run_grid(configs)
    _check_failures(records)
    groups = group_records(records)
    (ref_cfg, ref_recs), (cand_cfg, cand_recs) = groups
    ref = replicate_error_curve(ref_recs, star)
    cand = replicate_error_curve(cand_recs, star)
    abc = abc_metric(ref, cand)
    steps = ref_cfg.record_stride * np.arange(1, ref.size + 1)
    out = Path(args.out)
    _write_csv(out / "compare.csv", ["step", "error_reference", "error_candidate", "abc"],
               [[int(s), float(a), float(b), abc] for s, a, b in zip(steps, ref, cand)])
    print(f"reference {ref_cfg.algorithm}  candidate {cand_cfg.algorithm}  ABC = {abc:.6g}")
    return 0


def check_model_report(model, seed: int = 0, n_pairs: int = 1000) -> dict:
    est = check_assumptions(model, n_pairs=n_pairs, seed=seed)
    mu, lip = est["mu_est"], est["lip_est"]
    g1 = math.sqrt(mu + lip)
    g2 = 2 * math.sqrt(lip)
    return {"mu_est": mu, "lip_est": lip,
            "gamma_min_kiplmc1": g1, "eta_max_kiplmc1": mu / (4 * g1 * lip),
            "gamma_min_kiplmc2": g2, "eta_max_kiplmc2": mu / (33 * g2**3)}


def cmd_check_model(args) -> int:
    doc = load_document(args)
    base = expand_configs(doc)[0]
    model, _ = build_model(base.model_spec)
    report = check_model_report(model, seed=base.seed)
    for k, v in report.items():
        print(f"{k:>18}  {v:.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "check_model.json").write_text(json.dumps(report, indent=2) + "\n",
                                              encoding="utf-8")
    return 0


def bounds_table(params: TheoryBoundParams, n_values) -> list[list]:
    b1 = bound_kiplmc1(params, n_values)
    b2 = bound_kiplmc2(params, n_values)
    conc = concentration_bound(params.mu, params.d_theta, params.N)
    return [[int(n), float(a), float(b), conc] for n, a, b in zip(n_values, b1, b2)]


def cmd_bounds(args) -> int:
    doc = load_document(args)
    cfg = expand_configs(doc)[0]
    model, _ = build_model(cfg.model_spec)
    extra = doc.get("bounds") or {}
    mu, lip = extra.get("mu"), extra.get("lip")
    if mu is None or lip is None:
        if model.spec.mu_hint is not None and model.spec.lip_hint is not None:
            mu = model.spec.mu_hint if mu is None else mu
            lip = model.spec.lip_hint if lip is None else lip
        else:
            est = check_assumptions(model, seed=cfg.seed)
            mu = est["mu_est"] if mu is None else mu
            lip = est["lip_est"] if lip is None else lip
    init = extra.get("init_moment")
    if init is None:
        if not isinstance(model, GaussianHierarchicalModel):
            raise UsageError("bounds.init_moment is required for non-Gaussian models")
        init = gaussian_init_moment(model, cfg.N, cfg.init.get("theta0"), cfg.init.get("x0"))
    params = TheoryBoundParams(float(mu), float(lip), cfg.gamma, cfg.eta, cfg.N,
                               model.spec.d_theta, model.spec.d_x, float(init))
    n_values = np.arange(0, cfg.n_steps + 1, cfg.record_stride)
    out = Path(args.out)
    _write_csv(out / "bounds.csv", ["n", "bound_kiplmc1", "bound_kiplmc2", "concentration"],
               bounds_table(params, n_values))
    print(f"mu={mu:.6g} L={lip:.6g} init_moment={init:.6g}")
    print(f"KIPLMC1 regime: {params.kiplmc1_in_regime}  KIPLMC2 regime: {params.kiplmc2_in_regime}")
    return 0


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep,
            "check-model": cmd_check_model, "bounds": cmd_bounds}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kiplmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON or TOML config file")
        p.add_argument("--out", required=(name != "check-model"), help="output directory")
        p.add_argument("--override", "--overrides", action="append", metavar="KEY=VALUE",
                       help="override a config field (repeatable)")
        p.add_argument("--replicates", type=int, help="number of replicates")
        p.add_argument("--seed", type=int, help="base seed")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError, DatasetError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
