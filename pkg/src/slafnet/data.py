"""Datasets: two spirals, sparse random polynomials, tabular CSV ingestion.

Every generator is deterministic given its seed. Standardization statistics
are always fitted on the training split and stored on both splits.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .polybasis import Polynomial, poly_eval_batch

__all__ = [
    "Dataset",
    "DataError",
    "gen_two_spirals",
    "gen_sparse_poly",
    "gen_quadratic_regression",
    "split_dataset",
    "standardize",
    "load_csv",
    "write_csv",
    "BOSTON_COLUMNS",
]

TASKS = ("regression", "binary", "multiclass")

BOSTON_COLUMNS = (
    "CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE",
    "DIS", "RAD", "TAX", "PTRATIO", "B", "LSTAT", "MEDV",
)


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    feature_names: list[str] = field(default_factory=list)
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(self.X.shape[0], -1)
        if self.X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.X.shape}")
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.y)):
            raise DataError("dataset contains NaN or Inf")
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(self.X.shape[1])]

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx], meta=dict(self.meta))


def gen_two_spirals(n_per_class: int, turns: float = 1.75, noise: float = 0.02, seed: int = 0) -> Dataset:
    """Two interleaved spirals with labels 0 and 1.

    For ``t`` uniform in (0, 1], class 0 sits at radius ``t`` and angle
    ``2*pi*turns*t`` plus Gaussian noise; the class-1 point is the same point
    rotated by pi. Rows are shuffled.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if turns <= 0:
        raise ValueError("turns must be positive")
    rng = np.random.default_rng(seed)
    t = 1.0 - rng.uniform(0.0, 1.0, n_per_class)
    theta = 2.0 * np.pi * turns * t
    p0 = np.column_stack([t * np.cos(theta), t * np.sin(theta)])
    if noise > 0:
        p0 = p0 + rng.normal(0.0, noise, size=p0.shape)
    X = np.vstack([p0, -p0])
    y = np.concatenate([np.zeros(n_per_class), np.ones(n_per_class)])
    t_all = np.concatenate([t, t])
    order = rng.permutation(2 * n_per_class)
    return Dataset(
        X[order],
        y[order],
        task="binary",
        feature_names=["x", "y"],
        meta={"kind": "two_spirals", "turns": turns, "noise": noise, "seed": seed, "t": t_all[order]},
    )


def gen_sparse_poly(
    n_samples: int,
    n_vars: int = 100,
    n_monomials: int = 10,
    degree: int = 3,
    noise: float = 0.0,
    seed: int = 0,
) -> tuple[Dataset, Polynomial]:
    """Standard-normal inputs and a random sparse polynomial target.

    Each monomial multiplies ``degree`` variable indices drawn with
    replacement; coefficients are standard normal. Identical monomials are
    merged, and the merged term count is stored in ``meta["n_terms"]``.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    rng = np.random.default_rng(seed)
    terms: dict[tuple[int, ...], float] = {}
    for _ in range(n_monomials):
        idx = rng.integers(0, n_vars, size=degree)
        exps = np.bincount(idx, minlength=n_vars)
        key = tuple(int(e) for e in exps)
        terms[key] = terms.get(key, 0.0) + float(rng.normal())
    truth = Polynomial(n_vars, terms)
    X = rng.normal(size=(n_samples, n_vars))
    y = poly_eval_batch(truth, X) if n_monomials else np.zeros(n_samples)
    if noise > 0:
        y = y + rng.normal(0.0, noise, size=n_samples)
    involved = sorted({j for key in terms for j, e in enumerate(key) if e})
    ds = Dataset(
        X,
        y,
        task="regression",
        meta={
            "kind": "sparse_poly",
            "degree": degree,
            "n_monomials": n_monomials,
            "n_terms": len(truth),
            "involved_vars": involved,
            "seed": seed,
        },
    )
    return ds, truth


def gen_quadratic_regression(
    n_samples: int = 506,
    n_features: int = 13,
    n_interactions: int = 12,
    noise: float = 3.0,
    target_mean: float = 22.5,
    target_std: float = 9.0,
    seed: int = 0,
) -> tuple[Dataset, Polynomial]:
    """Synthetic stand-in for a housing-price table with a quadratic ground truth.

    Features are correlated Gaussians; the clean target is a random linear
    part plus ``n_interactions`` random degree-2 terms, rescaled to
    ``target_mean`` / ``target_std``, before adding Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(n_features, n_features)) / math.sqrt(n_features)
    mix += np.eye(n_features)
    Z = rng.normal(size=(n_samples, n_features)) @ mix
    terms: dict[tuple[int, ...], float] = {}
    for j in range(n_features):
        e = [0] * n_features
        e[j] = 1
        terms[tuple(e)] = float(rng.normal())
    for _ in range(n_interactions):
        a, b = rng.integers(0, n_features, size=2)
        e = [0] * n_features
        e[a] += 1
        e[b] += 1
        terms[tuple(e)] = terms.get(tuple(e), 0.0) + float(rng.normal(0.0, 0.7))
    raw = Polynomial(n_features, terms)
    clean = poly_eval_batch(raw, Z)
    mu, sd = clean.mean(), clean.std()
    scale = target_std / sd
    truth = raw * scale + (target_mean - mu * scale)
    y = poly_eval_batch(truth, Z) + rng.normal(0.0, noise, size=n_samples)
    names = list(BOSTON_COLUMNS[:-1]) if n_features == 13 else []
    ds = Dataset(Z, y, task="regression", feature_names=names, meta={"kind": "quadratic_regression", "noise": noise, "seed": seed})
    return ds, truth


def split_dataset(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffled split; the test part has ``floor((1 - f) * m)`` rows, the rest train."""
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError("train_fraction must be in (0, 1]")
    m = len(ds)
    n_test = int(math.floor(round((1.0 - train_fraction) * m, 9)))
    order = np.random.default_rng(seed).permutation(m)
    train, test = ds.subset(order[n_test:]), ds.subset(order[:n_test])
    train.meta["rows"] = len(train)
    test.meta["rows"] = len(test)
    return train, test


def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Scale features with train-split mean/std; apply the same map to ``others``."""
    mean = train.X.mean(axis=0)
    scale = train.X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    out = []
    for ds in (train, *others):
        out.append(replace(ds, X=(ds.X - mean) / scale, feature_mean=mean.copy(), feature_scale=scale.copy(), meta=dict(ds.meta)))
    return tuple(out)


def load_csv(
    path: str | Path,
    target_column: str,
    standardize_features: bool = True,
    train_fraction: float = 0.8,
    seed: int = 0,
    task: str = "regression",
) -> tuple[Dataset, Dataset]:
    """Read a headered numeric CSV, split it and (optionally) standardize.

    Errors name the offending row and column. Row numbers count the header
    as row 1.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        if target_column not in header:
            raise DataError(f"{path}: target column {target_column!r} not in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {col!r}: non-numeric value {cell!r}") from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.array(rows)
    t = header.index(target_column)
    features = [h for i, h in enumerate(header) if i != t]
    ds = Dataset(np.delete(data, t, axis=1), data[:, t], task=task, feature_names=features, meta={"source": str(path)})
    train, test = split_dataset(ds, train_fraction, seed)
    if standardize_features:
        train, test = standardize(train, test)
    return train, test


def write_csv(ds: Dataset, path: str | Path, target_name: str | None = None) -> None:
    """Write features plus a final ``label`` (classification) or ``target`` column."""
    name = target_name or ("target" if ds.task == "regression" else "label")
    cols = list(ds.feature_names)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if ds.y.shape[1] == 1:
            w.writerow(cols + [name])
        else:
            w.writerow(cols + [f"{name}{i}" for i in range(ds.y.shape[1])])
        for xr, yr in zip(ds.X, ds.y):
            vals = [repr(float(v)) for v in xr]
            if ds.task == "regression":
                vals += [repr(float(v)) for v in yr]
            else:
                vals += [str(int(v)) for v in yr]
            w.writerow(vals)
