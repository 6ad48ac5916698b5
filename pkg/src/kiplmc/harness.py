"""Config-driven experiment execution and results bundles.

Random streams: replicate ``r`` of a config with seed ``s`` draws everything (initial
momenta, optional Gaussian initial positions, then per-step noise) from
``Generator(PCG64(SeedSequence(s, spawn_key=(r,))))``.  Within a step the theta
noise is drawn before the latent noise.  Replicates of one config are stepped as a
batch; batching does not change any replicate's numbers.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import error_curve, rmse_to_target, tail_variance
from .datasets import load_synthetic, load_wisconsin, write_wisconsin_surrogate
from .integrators import (ALGORITHMS, KINETIC, ParticleState, StackedGaussianNoise,
                          initialize_state, make_stepper)
from .models import (GaussianHierarchicalModel, Model, PriorMode,
                     generate_synthetic_logistic)

SCHEMA_VERSION = 1
RNG_DESCRIPTION = "numpy PCG64 via SeedSequence(seed, spawn_key=(replicate,))"
MODEL_TYPES = ("gaussian", "logistic-synthetic", "logistic-file")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class SchemaError(ValueError):
    """Results bundle written by an incompatible schema version."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment cell.

    ``model_spec`` is a dict tagged by ``type``:

    * ``gaussian``: ``y`` (list), ``sigma_x``, ``sigma_y``.
    * ``logistic-synthetic``: ``d_x``, ``d_y``, ``theta_true``, ``sigma``, ``seed``,
      optional ``prior_mode``.
    * ``logistic-file``: ``path``, ``format`` (``wisconsin`` or ``synthetic``),
      optional ``prior_mode``, ``sigma`` and ``surrogate_if_missing`` (write a
      Wisconsin-layout surrogate to ``path`` when the file does not exist).

    ``init`` accepts ``theta0``, ``x0`` (lists) and ``x0_mode``
    (``PointMass`` or ``Gaussian``).
    """

    model_spec: dict
    algorithm: str = "KIPLMC1"
    N: int = 10
    eta: float = 0.01
    gamma: float = 1.0
    n_steps: int = 10_000
    n_replicates: int = 1
    seed: int = 0
    init: dict = field(default_factory=dict)
    tail_window: int = 500
    record_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "algorithm", str(self.algorithm).upper())
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.model_spec.get("type") not in MODEL_TYPES:
            raise ConfigError(f"model_spec.type must be one of {MODEL_TYPES}")
        if int(self.N) < 1 or int(self.n_replicates) < 1 or int(self.n_steps) < 1:
            raise ConfigError("N, n_replicates and n_steps must be positive")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.algorithm in KINETIC and not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be at least 1")
        if self.n_steps < self.tail_window:
            raise ConfigError("n_steps must be at least tail_window")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        for name in ("N", "n_steps", "n_replicates", "seed", "tail_window", "record_stride"):
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "gamma", float(self.gamma))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "model_spec" not in data:
            raise ConfigError("config requires model_spec")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        data = self.to_dict()
        for key, value in overrides.items():
            apply_override(data, key, value)
        return ExperimentConfig.from_dict(data)


def apply_override(data: dict, key: str, value) -> None:
    """Set a (dotted) key in a config dict, e.g. ``eta`` or ``model_spec.sigma``."""
    parts = key.split(".")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    if parts[0] not in top:
        raise ConfigError(f"override targets unknown field {parts[0]!r}")
    target = data
    for p in parts[:-1]:
        if not isinstance(target.get(p), dict):
            target[p] = {}
        target = target[p]
    target[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with the value parsed as JSON when possible, else kept as text."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _read_mapping(path) -> dict:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def read_config_file(path) -> dict:
    """Load a JSON or TOML config document (raw mapping, not yet validated)."""
    data = _read_mapping(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return data


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Load a single ExperimentConfig from JSON or TOML and apply overrides."""
    data = read_config_file(path)
    for key, value in (overrides or {}).items():
        apply_override(data, key, value)
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

def _resolve_path(spec: dict) -> Path:
    path = Path(spec["path"]).expanduser()
    if not path.exists():
        if spec.get("surrogate_if_missing") and spec.get("format", "wisconsin") == "wisconsin":
            path.parent.mkdir(parents=True, exist_ok=True)
            write_wisconsin_surrogate(path, seed=int(spec.get("surrogate_seed", 0)))
        else:
            raise FileNotFoundError(f"dataset file not found: {path}")
    return path


def build_model(spec: dict) -> tuple[Model, Optional[str]]:
    """Construct the model described by ``spec``; also returns the dataset digest
    for file-backed models."""
    return _build_model_cached(json.dumps(spec, sort_keys=True))


@lru_cache(maxsize=16)
def _build_model_cached(key: str):
    spec = json.loads(key)
    kind = spec.get("type")
    try:
        if kind == "gaussian":
            return GaussianHierarchicalModel(spec["y"], spec.get("sigma_x", 1.0),
                                             spec.get("sigma_y", 1.0)), None
        if kind == "logistic-synthetic":
            model = generate_synthetic_logistic(int(spec["d_x"]), int(spec["d_y"]),
                                                spec["theta_true"], float(spec["sigma"]),
                                                int(spec.get("seed", 0)))
            mode = spec.get("prior_mode", PriorMode.VECTOR_MEAN.value)
            if PriorMode(mode) is not PriorMode.VECTOR_MEAN:
                raise ConfigError("logistic-synthetic supports only VectorMean")
            return model, None
        if kind == "logistic-file":
            path = _resolve_path(spec)
            fmt = spec.get("format", "wisconsin")
            if fmt == "wisconsin":
                data = load_wisconsin(path)
                mode = spec.get("prior_mode", PriorMode.SCALAR_MEAN_TIMES_ONES.value)
            elif fmt == "synthetic":
                data = load_synthetic(path)
                mode = spec.get("prior_mode", PriorMode.VECTOR_MEAN.value)
            else:
                raise ConfigError(f"unknown dataset format {fmt!r}")
            sigma = spec.get("sigma")
            if sigma is None and fmt == "synthetic" and data.config:
                sigma = data.config.get("sigma")
            theta_true = (data.config or {}).get("theta_true")
            return data.to_model(prior_mode=mode, sigma=sigma, theta_true=theta_true), \
                data.source_digest
    except KeyError as exc:
        raise ConfigError(f"model_spec missing field {exc.args[0]!r}") from None
    raise ConfigError(f"unknown model type {kind!r}")


def theta_star_of(model: Model) -> Optional[np.ndarray]:
    """Known target: analytic MMLE for the Gaussian model, else the data-generating
    theta when one is recorded."""
    if model.spec.theta_star is not None:
        return np.asarray(model.spec.theta_star, dtype=float)
    truth = getattr(model, "theta_true", None)
    return None if truth is None else np.asarray(truth, dtype=float)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    config: ExperimentConfig
    replicate: int
    steps: np.ndarray
    theta_trajectory: np.ndarray
    diverged_at: Optional[int]
    wall_time: float
    rng_stream_id: int
    error: Optional[str] = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def tail_variance(self) -> np.ndarray:
        """Per-coordinate variance over recorded steps in the final ``tail_window``.

        Diverged runs report ``inf``.
        """
        d = self.theta_trajectory.shape[1] if self.theta_trajectory.ndim == 2 else 1
        if self.diverged or self.error is not None:
            return np.full(d, np.inf)
        rows = self.tail_rows()
        return tail_variance(rows, window=rows.shape[0])

    def tail_rows(self) -> np.ndarray:
        """Recorded theta rows with step index in the final ``tail_window``."""
        return self.theta_trajectory[self.steps > self.config.n_steps - self.config.tail_window]

    def tail_mean(self) -> np.ndarray:
        return self.tail_rows().mean(axis=0)

    def same_result(self, other: "RunRecord") -> bool:
        """Equality ignoring wall time."""
        return (self.config == other.config and self.replicate == other.replicate
                and self.diverged_at == other.diverged_at
                and self.rng_stream_id == other.rng_stream_id
                and self.error == other.error
                and np.array_equal(self.steps, other.steps)
                and np.array_equal(self.theta_trajectory, other.theta_trajectory))


def replicate_generator(seed: int, replicate: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replicate,))))


def _initial_state(config: ExperimentConfig, model: Model, rngs) -> ParticleState:
    init = config.init or {}
    d_theta, d_x = model.spec.d_theta, model.spec.d_x
    parts = [initialize_state(d_theta, d_x, config.N, theta0=init.get("theta0"),
                              x0=init.get("x0"), x0_mode=init.get("x0_mode", "PointMass"),
                              seed=rng, overdamped=config.algorithm not in KINETIC)
             for rng in rngs]
    return ParticleState(*(np.stack([getattr(p, f) for p in parts])
                           for f in ("theta", "latents", "v_theta", "v_latents")))


def _run_batch(config: ExperimentConfig, replicates: Sequence[int]) -> list[RunRecord]:
    start = time.perf_counter()
    model, _ = build_model(config.model_spec)
    rngs = [replicate_generator(config.seed, r) for r in replicates]
    state = _initial_state(config, model, rngs)
    noise = StackedGaussianNoise(rngs)
    step = make_stepper(config.algorithm, model, config.gamma, config.eta)
    stride = config.record_stride
    n_rec = config.n_steps // stride
    steps = stride * np.arange(1, n_rec + 1)
    traj = np.full((len(replicates), n_rec, model.spec.d_theta), np.nan)
    diverged_at = [None] * len(replicates)
    alive = np.ones(len(replicates), dtype=bool)
    with np.errstate(all="ignore"):
        for k in range(1, config.n_steps + 1):
            state = step(state, noise)
            ok = state.finite_mask()
            newly = alive & ~ok
            for i in np.flatnonzero(newly):
                diverged_at[i] = k
            alive &= ok
            if k % stride == 0:
                traj[alive, k // stride - 1] = state.theta[alive]
            if not alive.any():
                break
    elapsed = (time.perf_counter() - start) / len(replicates)
    records = []
    for i, r in enumerate(replicates):
        keep = steps < diverged_at[i] if diverged_at[i] is not None else slice(None)
        records.append(RunRecord(config, r, steps[keep], traj[i][keep], diverged_at[i],
                                 elapsed, r))
    return records


def run_single(config: ExperimentConfig, replicate_index: int) -> RunRecord:
    """Run one replicate.  Deterministic in ``(config, replicate_index)``."""
    if not 0 <= replicate_index:
        raise ValueError("replicate_index must be non-negative")
    return _run_batch(config, [replicate_index])[0]


def _worker_count() -> int:
    raw = os.environ.get("KIPLMC_THREADS")
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_cell(args):
    config, reps = args
    try:
        return _run_batch(config, reps)
    except Exception as exc:  # reported per cell, grid continues
        msg = f"{type(exc).__name__}: {exc}"
        return [RunRecord(config, r, np.zeros(0, dtype=int), np.zeros((0, 0)), None, 0.0, r,
                          error=msg) for r in reps]


def run_grid(configs: Sequence[ExperimentConfig], workers: Optional[int] = None,
             batch_size: int = 32) -> list[RunRecord]:
    """Run every replicate of every config.

    Results are ordered by (config index, replicate index) whatever the schedule.
    ``workers`` defaults to ``KIPLMC_THREADS`` (1 when unset).  Failures in a cell
    are captured in ``RunRecord.error`` instead of aborting the grid.
    """
    cells = []
    for cfg in configs:
        reps = list(range(cfg.n_replicates))
        for lo in range(0, len(reps), batch_size):
            cells.append((cfg, reps[lo:lo + batch_size]))
    workers = _worker_count() if workers is None else max(1, int(workers))
    if workers == 1 or len(cells) == 1:
        results = [_run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, cells))
    return [rec for batch in results for rec in batch]


def group_records(records: Sequence[RunRecord]) -> list[tuple[ExperimentConfig, list[RunRecord]]]:
    """Group consecutive records by config cell, preserving order.

    A replicate index that does not increase starts a new group, so two identical
    cells in one grid stay separate.
    """
    groups: list[tuple[ExperimentConfig, list[RunRecord]]] = []
    for rec in records:
        if (groups and groups[-1][0] == rec.config
                and rec.replicate > groups[-1][1][-1].replicate):
            groups[-1][1].append(rec)
        else:
            groups.append((rec.config, [rec]))
    return groups


def summarize(config: ExperimentConfig, records: Sequence[RunRecord]) -> dict:
    """Aggregate metrics for one config's replicates."""
    model, _ = build_model(config.model_spec)
    star = theta_star_of(model)
    finite = [r for r in records if not r.diverged and r.error is None]
    tv = np.array([r.tail_variance() for r in records])
    out = {
        "algorithm": config.algorithm, "N": config.N, "eta": config.eta,
        "gamma": config.gamma, "n_replicates": len(records),
        "n_diverged": sum(r.diverged for r in records),
        "n_failed": sum(r.error is not None for r in records),
        "tail_variance_mean": float(np.mean(tv)) if tv.size else math.nan,
        "rmse_final": math.nan,
    }
    if star is not None and finite:
        out["rmse_final"] = rmse_to_target([r.theta_trajectory for r in finite], star)
    return out


def replicate_error_curve(records: Sequence[RunRecord], theta_star) -> np.ndarray:
    """Per-recorded-step RMSE across replicates.  Steps after a replicate diverged
    count as infinite error."""
    n_rec = records[0].config.n_steps // records[0].config.record_stride
    d = len(np.atleast_1d(theta_star))
    stacked = np.full((len(records), n_rec, d), np.inf)
    for i, r in enumerate(records):
        stacked[i, :r.theta_trajectory.shape[0]] = r.theta_trajectory
    with np.errstate(invalid="ignore", over="ignore"):
        return error_curve(stacked, theta_star)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _config_key(configs: list, cfg: ExperimentConfig) -> int:
    for i, c in enumerate(configs):
        if c == cfg:
            return i
    configs.append(cfg)
    return len(configs) - 1


def persist(records: Sequence[RunRecord], path) -> Path:
    """Write ``meta.json`` plus ``runs/run_{config}_{rep}.csv`` under ``path``."""
    root = Path(path)
    (root / "runs").mkdir(parents=True, exist_ok=True)
    configs: list[ExperimentConfig] = []
    entries = []
    for rec in records:
        ci = _config_key(configs, rec.config)
        name = f"runs/run_{ci}_{rec.replicate}.csv"
        d = rec.theta_trajectory.shape[1] if rec.theta_trajectory.ndim == 2 else 0
        with open(root / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step"] + [f"theta_{j}" for j in range(d)])
            for s, row in zip(rec.steps, rec.theta_trajectory):
                w.writerow([int(s)] + [repr(float(v)) for v in row])
        entries.append({"config_index": ci, "replicate": rec.replicate, "file": name,
                        "d_theta": d, "diverged_at": rec.diverged_at,
                        "wall_time": rec.wall_time, "rng_stream_id": rec.rng_stream_id,
                        "error": rec.error})
    digests = {}
    for i, cfg in enumerate(configs):
        if cfg.model_spec.get("type") == "logistic-file":
            digests[str(i)] = build_model(cfg.model_spec)[1]
    meta = {"schema_version": SCHEMA_VERSION, "software_version": __version__,
            "numpy_version": np.__version__, "rng": RNG_DESCRIPTION,
            "configs": [c.to_dict() for c in configs], "dataset_digests": digests,
            "runs": entries}
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return root


def load(path) -> list[RunRecord]:
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"bundle schema {meta.get('schema_version')} != {SCHEMA_VERSION}")
    configs = [ExperimentConfig.from_dict(c) for c in meta["configs"]]
    out = []
    for e in meta["runs"]:
        with open(root / e["file"], newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        d = e["d_theta"]
        steps = np.array([int(r[0]) for r in rows], dtype=int)
        traj = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), d)
        out.append(RunRecord(configs[e["config_index"]], e["replicate"], steps, traj,
                             e["diverged_at"], e["wall_time"], e["rng_stream_id"], e["error"]))
    return out
