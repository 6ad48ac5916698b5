"""Dataset ingestion: the UCI Wisconsin breast cancer file and synthetic CSV bundles."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import LogisticRegressionModel, PriorMode, generate_synthetic_logistic

WISCONSIN_COLUMNS = 11


class DatasetError(ValueError):
    """Malformed or empty dataset file."""


@dataclass(frozen=True)
class TabularDataset:
    features: np.ndarray
    labels: np.ndarray
    source_digest: str
    n_dropped: int = 0
    config: dict | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("non-finite feature values")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DatasetError("labels must be binary")

    def to_model(self, prior_mode=PriorMode.SCALAR_MEAN_TIMES_ONES, sigma=None,
                 theta_true=None) -> LogisticRegressionModel:
        return LogisticRegressionModel(self.features, self.labels, sigma=sigma,
                                       prior_mode=prior_mode, theta_true=theta_true)


def _digest(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def load_wisconsin(path) -> TabularDataset:
    """Parse ``breast-cancer-wisconsin.data``.

    Rows containing ``?`` are dropped, the id column is discarded, class 2 maps to 0
    (benign) and 4 to 1 (malignant), and each feature column is standardised to zero
    mean and unit (population) variance.
    """
    raw = Path(path).read_bytes()
    rows, labels, dropped = [], [], 0
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        tokens = [t.strip() for t in line.split(",")]
        if len(tokens) != WISCONSIN_COLUMNS:
            raise DatasetError(f"line {lineno}: expected {WISCONSIN_COLUMNS} columns, "
                               f"got {len(tokens)}")
        if "?" in tokens:
            dropped += 1
            continue
        try:
            values = [int(t) for t in tokens]
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
        if values[10] not in (2, 4):
            raise DatasetError(f"line {lineno}: class must be 2 or 4, got {values[10]}")
        rows.append(values[1:10])
        labels.append(0.0 if values[10] == 2 else 1.0)
    if not rows:
        raise DatasetError(f"{path}: no usable rows")
    x = np.asarray(rows, dtype=float)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    x = (x - x.mean(axis=0)) / sd
    return TabularDataset(x, np.asarray(labels), _digest(raw), dropped)


def raw_wisconsin_features(path) -> np.ndarray:
    """Unstandardised feature matrix of the retained rows (for inspection and tests)."""
    out = []
    for line in Path(path).read_text().splitlines():
        tokens = line.strip().split(",")
        if len(tokens) == WISCONSIN_COLUMNS and "?" not in tokens:
            out.append([int(t) for t in tokens[1:10]])
    return np.asarray(out, dtype=float)


def write_wisconsin_surrogate(path, seed: int = 0, n_benign: int = 458, n_malignant: int = 241,
                              n_missing: int = 16) -> Path:
    """Write a synthetic file in the UCI Wisconsin layout.

    Used when the real file is unavailable.  Nine integer features in 1..10 are driven
    by a shared per-row severity, so they are strongly correlated and separate the two
    classes, like the original.  ``n_missing`` rows get ``?`` in the bare-nuclei column.
    """
    rng = np.random.default_rng(seed)
    n = n_benign + n_malignant
    label = np.r_[np.zeros(n_benign, int), np.ones(n_malignant, int)]
    rng.shuffle(label)
    severity = np.where(label == 1, rng.beta(4.0, 2.0, n), rng.beta(1.2, 8.0, n))
    loading = rng.uniform(0.6, 1.0, 9)
    feats = 1 + 9 * (severity[:, None] * loading + 0.12 * rng.standard_normal((n, 9)))
    feats = np.clip(np.rint(feats), 1, 10).astype(int)
    missing = set(rng.choice(n, size=n_missing, replace=False).tolist())
    ids = rng.choice(np.arange(1_000_000, 1_400_000), size=n, replace=False)
    lines = []
    for i in range(n):
        cells = [str(ids[i])] + [str(v) for v in feats[i]] + [str(2 + 2 * label[i])]
        if i in missing:
            cells[6] = "?"
        lines.append(",".join(cells))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def _synthetic_config(config: dict) -> dict:
    return {"d_x": int(config["d_x"]), "d_y": int(config["d_y"]),
            "theta_true": [float(t) for t in config["theta_true"]],
            "sigma": float(config["sigma"]), "seed": int(config["seed"])}


def materialize_synthetic(config: dict, path) -> TabularDataset:
    """Generate a synthetic logistic dataset and write it as CSV.

    Layout: one ``# {json}`` line holding the generating config, a ``v_1,...,v_dx,y``
    header, then one row per observation.  Floats are written with ``repr`` so the
    file reloads bit-exactly.
    """
    cfg = _synthetic_config(config)
    model = generate_synthetic_logistic(cfg["d_x"], cfg["d_y"], cfg["theta_true"],
                                        cfg["sigma"], cfg["seed"])
    header = ",".join([f"v_{k + 1}" for k in range(cfg["d_x"])] + ["y"])
    lines = ["# " + json.dumps(cfg, sort_keys=True), header]
    for v, y in zip(model.covariates, model.responses):
        lines.append(",".join([repr(float(a)) for a in v] + [str(int(y))]))
    data = ("\n".join(lines) + "\n").encode("utf-8")
    Path(path).write_bytes(data)
    return TabularDataset(np.array(model.covariates), np.array(model.responses),
                          _digest(data), 0, cfg)


def load_synthetic(path) -> TabularDataset:
    raw = Path(path).read_bytes()
    lines = raw.decode("utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DatasetError(f"{path}: missing '#' config header")
    cfg = json.loads(lines[0][1:])
    body = [ln for ln in lines[2:] if ln.strip()]
    if not body:
        raise DatasetError(f"{path}: no data rows")
    arr = np.array([[float(t) for t in ln.split(",")] for ln in body])
    return TabularDataset(arr[:, :-1], arr[:, -1], _digest(raw), 0, cfg)
