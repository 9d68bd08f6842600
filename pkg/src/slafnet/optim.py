"""Gradient-based training (SGD, Adam) and a coordinate-descent Lasso solver."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from . import tensorcore as tc
from .data import Dataset
from .network import DivergenceError, LayerSpec, Model, ModelSpec, build
from .polybasis import CapacityError, capacity_cap, enumerate_basis, expand_features
from .tensorcore import Tensor

__all__ = [
    "TrainConfig",
    "TrainReport",
    "EpochRow",
    "SGD",
    "Adam",
    "AdamState",
    "adam_step",
    "train",
    "evaluate",
    "LassoProblem",
    "LassoResult",
    "lasso_cd",
    "lasso_lambda_max",
    "poly_feature_regression",
    "PolyRegressionResult",
    "DEFAULT_MAX_CELLS",
]

DEFAULT_MAX_CELLS = 50_000_000
METRICS = ("accuracy", "rmse", "mse")


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 64
    shuffle_seed: int = 0
    clip_norm: float | None = None
    metric: str = "rmse"
    regularizers: dict[str, float] | None = None

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    train_metric: float
    val_metric: float | None
    wall_ms: float

    CSV_COLUMNS = ("epoch", "train_loss", "train_metric", "val_metric", "wall_ms")

    def csv_row(self) -> list[str]:
        val = "" if self.val_metric is None else repr(self.val_metric)
        return [str(self.epoch), repr(self.train_loss), repr(self.train_metric), val, f"{self.wall_ms:.3f}"]


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)
    metric: str = "rmse"
    diverged_at: tuple[int, int] | None = None

    @property
    def final(self) -> EpochRow | None:
        return self.rows[-1] if self.rows else None

    def losses(self) -> list[float]:
        return [r.train_loss for r in self.rows]


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(
    state: AdamState,
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update applied in place to ``params``."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        p.data -= lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.zeros(self.params)

    def step(self) -> None:
        adam_step(self.state, self.params, [p.grad for p in self.params], self.lr, self.beta1, self.beta2, self.eps)


def _clip(params: Sequence[Tensor], max_norm: float) -> None:
    norm = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale


def _batches(m: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(m)
    out = [order[s:s + batch_size] for s in range(0, m, batch_size)]
    # single-row batches have zero variance; fold them into the previous batch
    if len(out) > 1 and out[-1].size == 1:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def evaluate(model: Model, ds: Dataset, metric: str) -> float:
    """Evaluation-phase metric on a whole dataset."""
    pred = model.predict(ds.X)
    if metric == "accuracy":
        if pred.shape[1] == 1:
            labels = (pred[:, 0] >= 0.5).astype(float)
        else:
            labels = pred.argmax(axis=1).astype(float)
        return float(np.mean(labels == ds.y[:, 0]))
    mse = float(np.mean((pred - ds.y) ** 2))
    return mse if metric == "mse" else math.sqrt(mse)


def train(
    model: Model,
    dataset: Dataset,
    config: TrainConfig,
    val: Dataset | None = None,
    on_epoch: Callable[[EpochRow], None] | None = None,
) -> TrainReport:
    """Mini-batch training; parameters are updated in place.

    Raises DivergenceError (with epoch and batch index) on a non-finite loss;
    the rows collected so far travel on the exception as ``report``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if config.regularizers is not None:
        model.spec.regularizers = dict(config.regularizers)
    params = model.parameters()
    if config.optimizer == "adam":
        opt: SGD | Adam = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    else:
        opt = SGD(params, config.lr)
    rng = np.random.default_rng(config.shuffle_seed)
    report = TrainReport(metric=config.metric)
    X, y = dataset.X, dataset.y
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(len(dataset), config.batch_size, rng)):
            try:
                loss = model.loss(X[idx], y[idx], phase="train")
            except DivergenceError as exc:
                report.diverged_at = (epoch, b)
                err = DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
                err.report = report  # type: ignore[attr-defined]
                raise err from exc
            tc.backward(loss)
            if config.clip_norm:
                _clip(params, config.clip_norm)
            opt.step()
            total += loss.item() * idx.size
            count += idx.size
        row = EpochRow(
            epoch=epoch,
            train_loss=total / count,
            train_metric=evaluate(model, dataset, config.metric),
            val_metric=evaluate(model, val, config.metric) if val is not None else None,
            wall_ms=(time.perf_counter() - t0) * 1000.0,
        )
        report.rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return report


# -- Lasso --------------------------------------------------------------------


@dataclass
class LassoProblem:
    """L1-penalized least squares, solved in standardized feature space.

    The objective is ``(1/2m) * ||y_c - Z w||^2 + lam * ||w||_1`` where ``Z``
    holds the centered, unit-variance columns of ``Phi`` and ``y_c`` is the
    centered target. The intercept is not penalized.
    """

    Phi: np.ndarray
    y: np.ndarray
    lam: float
    max_sweeps: int = 1000
    tol: float = 1e-7

    def __post_init__(self):
        self.Phi = np.asarray(self.Phi, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.Phi.ndim != 2 or self.Phi.shape[0] != self.y.size:
            raise ValueError(f"design matrix {self.Phi.shape} does not match {self.y.size} targets")
        if not np.all(np.isfinite(self.Phi)) or not np.all(np.isfinite(self.y)):
            raise ValueError("design matrix or targets contain NaN or Inf")


@dataclass
class LassoResult:
    coef: np.ndarray
    intercept: float
    std_coef: np.ndarray
    n_sweeps: int
    converged: bool
    objective: list[float]
    excluded: list[int]

    def predict(self, Phi: np.ndarray) -> np.ndarray:
        return np.asarray(Phi) @ self.coef + self.intercept


def _standardize_columns(Phi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    mean = Phi.mean(axis=0)
    scale = Phi.std(axis=0)
    active = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
    safe = np.where(active, scale, 1.0)
    Z = np.asfortranarray((Phi - mean) / safe)
    Z[:, ~active] = 0.0
    return Z, mean, safe, active


def lasso_lambda_max(Phi: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty at which every standardized coefficient is zero."""
    Z, _, _, _ = _standardize_columns(np.asarray(Phi, dtype=np.float64))
    yc = np.asarray(y, dtype=np.float64).reshape(-1)
    yc = yc - yc.mean()
    return float(np.max(np.abs(Z.T @ yc)) / yc.size)


def _lasso_objective(r: np.ndarray, w: np.ndarray, lam: float) -> float:
    return float(r @ r) / (2.0 * r.size) + lam * float(np.abs(w).sum())


def lasso_cd(problem: LassoProblem, sweep=None) -> LassoResult:
    """Cyclic coordinate descent with soft-thresholding.

    Stops when the largest coordinate change in a sweep is at most
    ``problem.tol`` or after ``problem.max_sweeps`` sweeps. Columns with zero
    variance are excluded with a warning. ``sweep`` overrides the kernel
    (used by benchmarks to compare backends).
    """
    sweep = sweep or kernels.cd_sweep
    Z, mean, scale, active = _standardize_columns(problem.Phi)
    excluded = [int(j) for j in np.nonzero(~active)[0]]
    if excluded:
        warnings.warn(f"lasso_cd: excluding zero-variance columns {excluded}", RuntimeWarning, stacklevel=2)
    m, p = Z.shape
    y_mean = float(problem.y.mean())
    r = np.ascontiguousarray(problem.y - y_mean)
    w = np.zeros(p)
    col_sq = np.where(active, (Z * Z).sum(axis=0) / m, 1.0)
    mask = np.ascontiguousarray(active.astype(np.uint8))
    history = [_lasso_objective(r, w, problem.lam)]
    converged = False
    sweeps = 0
    # KKT screen: w = 0 is optimal once lam >= max|Z^T r| / m
    if problem.lam >= float(np.max(np.abs(Z.T @ r), initial=0.0)) / m:
        return LassoResult(np.zeros(p), y_mean, w, 0, True, history, excluded)
    for sweeps in range(1, problem.max_sweeps + 1):
        change = sweep(Z, r, w, col_sq, float(problem.lam), mask)
        obj = _lasso_objective(r, w, problem.lam)
        if obj > history[-1] + 1e-12 * max(1.0, abs(history[-1])):
            raise RuntimeError(f"lasso_cd: objective increased at sweep {sweeps} ({history[-1]!r} -> {obj!r})")
        history.append(obj)
        if change <= problem.tol:
            converged = True
            break
    coef = np.where(active, w / scale, 0.0)
    intercept = y_mean - float(coef @ mean)
    return LassoResult(coef, intercept, w, sweeps, converged, history, excluded)


# -- polynomial-feature baselines ----------------------------------------------


@dataclass
class PolyRegressionResult:
    mode: str
    degree: int
    n_features: int
    coef: np.ndarray
    intercept: float
    metrics: dict[str, float]
    report: TrainReport | None = None
    model: Model | None = None


def _check_cells(rows: int, cols: int, max_cells: int | None) -> None:
    limit = DEFAULT_MAX_CELLS if max_cells is None else max_cells
    if rows * cols > limit:
        raise CapacityError(f"design matrix of {rows} x {cols} = {rows * cols} cells exceeds cap {limit}")


def poly_feature_regression(
    train_ds: Dataset,
    test_ds: Dataset | None,
    degree: int,
    mode: str = "lasso",
    penalty: float = 0.01,
    *,
    cap: int | None = None,
    max_cells: int | None = None,
    train_config: TrainConfig | None = None,
    seed: int = 0,
    max_sweeps: int = 1000,
    tol: float = 1e-7,
) -> PolyRegressionResult:
    """Fit a linear (or logistic) model on all monomials of degree <= ``degree``.

    Modes: ``lasso`` (coordinate descent), ``sgd_linear`` (L1-penalized
    least squares by gradient descent), ``sgd_logistic`` (L2-penalized
    logistic regression by gradient descent).
    """
    if mode not in ("lasso", "sgd_linear", "sgd_logistic"):
        raise ValueError(f"unknown mode {mode!r}")
    n = train_ds.n_features
    count = math.comb(degree + n, n)
    limit = capacity_cap(cap)
    if count > limit:
        raise CapacityError(f"degree-{degree} basis over {n} variables has {count} elements, cap is {limit}")
    _check_cells(len(train_ds), count, max_cells)
    basis = enumerate_basis(n, degree, cap)[1:]
    Phi_tr = expand_features(train_ds.X, basis)
    Phi_te = expand_features(test_ds.X, basis) if test_ds is not None else None
    metrics: dict[str, float] = {}
    if mode == "lasso":
        res = lasso_cd(LassoProblem(Phi_tr, train_ds.y[:, 0], penalty, max_sweeps=max_sweeps, tol=tol))
        metrics["train_rmse"] = _rmse(res.predict(Phi_tr), train_ds.y[:, 0])
        if Phi_te is not None:
            metrics["test_rmse"] = _rmse(res.predict(Phi_te), test_ds.y[:, 0])
        metrics["n_sweeps"] = res.n_sweeps
        return PolyRegressionResult(mode, degree, len(basis), res.coef, res.intercept, metrics)

    mean = Phi_tr.mean(axis=0)
    scale = Phi_tr.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    feat_tr = Dataset((Phi_tr - mean) / scale, train_ds.y, task=train_ds.task)
    feat_te = Dataset((Phi_te - mean) / scale, test_ds.y, task=test_ds.task) if Phi_te is not None else None
    if mode == "sgd_linear":
        spec = ModelSpec(len(basis), [LayerSpec("dense", units=1)], loss="mse", regularizers={"l1_first_layer": penalty})
        metric = "rmse"
    else:
        spec = ModelSpec(len(basis), [LayerSpec("sigmoid_head")], loss="binary_cross_entropy", regularizers={"l2_weights": penalty})
        metric = "accuracy"
    cfg = train_config or TrainConfig(metric=metric)
    if cfg.metric != metric:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "metric": metric})
    model = build(spec, seed)
    report = train(model, feat_tr, cfg, val=feat_te)
    dense = model.layers[0].dense if mode == "sgd_logistic" else model.layers[0]
    W = dense.W.data[:, 0] / scale
    intercept = float(dense.b.data[0, 0] - W @ mean)
    metrics[f"train_{metric}"] = evaluate(model, feat_tr, metric)
    if feat_te is not None:
        metrics[f"test_{metric}"] = evaluate(model, feat_te, metric)
    return PolyRegressionResult(mode, degree, len(basis), W, intercept, metrics, report, model)


def _rmse(pred: np.ndarray, y: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - y) ** 2)))
