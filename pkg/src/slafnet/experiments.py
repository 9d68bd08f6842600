"""Reproducible experiment runs driven by JSON configs.

A config names the experiment family, the dataset arguments, the model
(either a network spec or a polynomial-feature baseline) and the training
settings. :func:`run_experiment` returns a summary dict and, given an
output directory, writes ``model.json``, ``metrics.csv`` and
``summary.json`` there.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .data import Dataset, gen_quadratic_regression, gen_sparse_poly, gen_two_spirals, load_csv, split_dataset, standardize
from .network import DivergenceError, build, serialize
from .optim import EpochRow, TrainConfig, TrainReport, evaluate, poly_feature_regression, train

__all__ = [
    "SCHEMA_VERSION",
    "ExperimentConfig",
    "ExperimentError",
    "load_config",
    "shipped_configs",
    "load_dataset",
    "run_experiment",
]

SCHEMA_VERSION = 1
EXPERIMENTS = ("boston", "two_spirals", "sparse_poly", "custom")
METRIC_OF = {"two_spirals": "accuracy", "sparse_poly": "mse", "boston": "rmse"}


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    experiment: str
    data: dict[str, Any] = field(default_factory=dict)
    model: dict[str, Any] | None = None
    baseline: dict[str, Any] | None = None
    train: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    output_dir: str | None = None
    reconstructions: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ExperimentError(f"unknown experiment {self.experiment!r}, expected one of {EXPERIMENTS}")
        if (self.model is None) == (self.baseline is None):
            raise ExperimentError("config needs exactly one of 'model' or 'baseline'")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "experiment": self.experiment,
            "data": dict(self.data),
            "model": self.model,
            "baseline": self.baseline,
            "train": dict(self.train),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "reconstructions": list(self.reconstructions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ExperimentError(f"unknown config fields {sorted(unknown)}")
        if "name" not in d or "experiment" not in d:
            raise ExperimentError("config needs 'name' and 'experiment'")
        return cls(**d)

    def train_config(self) -> TrainConfig:
        metric = METRIC_OF.get(self.experiment, "rmse")
        return TrainConfig.from_dict({"metric": metric, **self.train})


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ExperimentError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(doc)


def shipped_configs() -> dict[str, Path]:
    """Bundled configs by stem, e.g. ``two_spirals_slnn``."""
    root = resources.files("slafnet") / "configs"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".json")}


def load_dataset(cfg: ExperimentConfig, csv_path: str | Path | None = None) -> tuple[Dataset, Dataset]:
    """Train/test split for a config. ``csv_path`` overrides the configured CSV."""
    d = dict(cfg.data)
    frac = d.pop("train_fraction", 0.8)
    seed = d.pop("seed", cfg.seed)
    path = csv_path or d.pop("csv", None)
    d.pop("csv", None)
    if cfg.experiment == "two_spirals":
        ds = gen_two_spirals(d.get("n_per_class", 1000), d.get("turns", 1.75), d.get("noise", 0.02), seed)
        return split_dataset(ds, frac, seed)
    if cfg.experiment == "sparse_poly":
        ds, _ = gen_sparse_poly(
            d.get("n_samples", 40000), d.get("n_vars", 100), d.get("n_monomials", 10), d.get("degree", 3), d.get("noise", 0.0), seed
        )
        return split_dataset(ds, frac, seed)
    if cfg.experiment == "boston" and path is None:
        ds, _ = gen_quadratic_regression(d.get("n_samples", 506), d.get("n_features", 13), seed=seed)
        return standardize(*split_dataset(ds, frac, seed))
    if path is None:
        raise ExperimentError(f"experiment {cfg.experiment!r} needs a CSV path")
    target = d.get("target_column", "MEDV" if cfg.experiment == "boston" else "target")
    return load_csv(path, target, True, frac, seed, d.get("task", "regression"))


def _write_metrics(rows: list[EpochRow], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EpochRow.CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    csv_path: str | Path | None = None,
) -> dict:
    """Run one config end to end and return its summary.

    On divergence the summary has ``status: "diverged"`` with the epochs
    completed so far, the artifacts are still written, and the
    :class:`DivergenceError` is re-raised with the summary attached.
    """
    out = Path(out_dir or cfg.output_dir) if (out_dir or cfg.output_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    tr, te = load_dataset(cfg, csv_path)
    tcfg = cfg.train_config()
    metric = tcfg.metric
    summary: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "experiment": cfg.experiment,
        "status": "ok",
        "metric": metric,
        "metrics": {},
        "dataset": {"train_rows": len(tr), "test_rows": len(te), "features": tr.n_features, "source": str(csv_path or cfg.data.get("csv") or "generated")},
        "reconstructions": list(cfg.reconstructions),
        "config": cfg.to_dict(),
    }
    t0 = time.perf_counter()
    error: DivergenceError | None = None
    rows: list[EpochRow] = []
    if cfg.baseline is not None:
        b = dict(cfg.baseline)
        res = poly_feature_regression(
            tr, te, b.get("degree", 2), b.get("mode", "lasso"), b.get("penalty", 0.01),
            train_config=tcfg, seed=cfg.seed, max_sweeps=b.get("max_sweeps", 1000), tol=b.get("tol", 1e-7),
        )
        key = "accuracy" if b.get("mode") == "sgd_logistic" else "rmse"
        summary["metric"] = key
        summary["metrics"] = {f"train_{key}": res.metrics[f"train_{key}"], f"test_{key}": res.metrics[f"test_{key}"]}
        summary["parameter_count"] = res.n_features + 1
        summary["degree"] = res.degree
        if res.report is not None:
            rows = res.report.rows
        model = res.model
    else:
        model = build(cfg.model, cfg.seed)
        report = TrainReport(metric=metric)
        try:
            report = train(model, tr, tcfg, val=te)
        except DivergenceError as exc:
            error = exc
            report = exc.report  # type: ignore[attr-defined]
            summary["status"] = "diverged"
            summary["diverged_at"] = {"epoch": report.diverged_at[0], "batch": report.diverged_at[1]}
        rows = report.rows
        if rows:
            summary["metrics"] = {f"train_{metric}": rows[-1].train_metric, f"test_{metric}": rows[-1].val_metric}
        if error is None:
            summary["metrics"] = {f"train_{metric}": evaluate(model, tr, metric), f"test_{metric}": evaluate(model, te, metric)}
        summary["parameter_count"] = model.parameter_count()
        summary["degree"] = model.degree()
    summary["epochs_completed"] = len(rows)
    summary["wall_time_s"] = time.perf_counter() - t0
    if out is not None:
        if model is not None and error is None:
            serialize(model, out / "model.json")
        _write_metrics(rows, out / "metrics.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if error is not None:
        error.summary = summary  # type: ignore[attr-defined]
        raise error
    return summary
