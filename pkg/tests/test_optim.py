import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slafnet import tensorcore as tc
from slafnet.data import Dataset, gen_two_spirals, split_dataset
from slafnet.network import DivergenceError, build
from slafnet.optim import (
    AdamState,
    LassoProblem,
    TrainConfig,
    adam_step,
    evaluate,
    lasso_cd,
    lasso_lambda_max,
    poly_feature_regression,
    train,
)
from slafnet.polybasis import CapacityError

LINEAR = {"input_width": 1, "layers": [{"kind": "dense", "units": 1}]}


def _line_data(m=64, seed=0):
    x = np.random.default_rng(seed).uniform(-1, 1, size=(m, 1))
    return Dataset(x, 2 * x)


def _ista(Z, y, lam, iters=20000):
    """Proximal gradient on (1/2m)||y - Zw||^2 + lam||w||_1, an independent oracle."""
    m = len(y)
    L = np.linalg.norm(Z, 2) ** 2 / m
    w = np.zeros(Z.shape[1])
    for _ in range(iters):
        g = w - (Z.T @ (Z @ w - y) / m) / L
        w = np.sign(g) * np.maximum(np.abs(g) - lam / L, 0.0)
    return w


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 0.1})


def test_zero_lr_leaves_parameters_unchanged():
    model = build(LINEAR, seed=0)
    before = [p.data.copy() for p in model.parameters()]
    report = train(model, _line_data(), TrainConfig(optimizer="sgd", lr=0.0, epochs=5, batch_size=64))
    for p, q in zip(before, model.parameters()):
        assert np.array_equal(p, q.data)
    # reshuffling changes only the summation order of the batch mean
    losses = report.losses()
    assert np.allclose(losses, losses[0], rtol=1e-14, atol=0)
    assert len({r.train_metric for r in report.rows}) == 1


def test_sgd_learns_slope_two():
    model = build(LINEAR, seed=0)
    train(model, _line_data(), TrainConfig(optimizer="sgd", lr=0.5, epochs=500, batch_size=64))
    W, b = model.parameters()
    assert abs(W.data[0, 0] - 2.0) <= 1e-3
    assert abs(b.data[0, 0]) <= 1e-3


def test_sgd_convex_quadratic_reaches_optimum():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.3 + rng.normal(0, 0.1, size=100)
    A = np.column_stack([X, np.ones(100)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    optimum = float(np.mean((A @ coef - y) ** 2))
    L = 2 * np.linalg.eigvalsh(A.T @ A / 100).max()
    model = build({"input_width": 3, "layers": [{"kind": "dense", "units": 1}]}, seed=0)
    ds = Dataset(X, y)
    train(model, ds, TrainConfig(optimizer="sgd", lr=1.0 / L, epochs=2000, batch_size=100))
    final = model.data_loss(X, y[:, None]).item()
    assert final - optimum <= 1e-6


def test_adam_hand_stepped_two_step_trace():
    p = tc.parameter([[1.0, -2.0]])
    state = AdamState.zeros([p])
    g1, g2 = np.array([[0.5, -0.1]]), np.array([[0.2, 0.3]])
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    adam_step(state, [p], [g1], lr)
    # step 1: m = 0.1 g, v = 0.001 g^2; bias-corrected ratio is g / |g|
    expect1 = np.array([[1.0, -2.0]]) - lr * g1 / (np.abs(g1) + eps)
    assert np.allclose(p.data, expect1, rtol=0, atol=1e-15)
    adam_step(state, [p], [g2], lr)
    m = b1 * (1 - b1) * g1 + (1 - b1) * g2
    v = b2 * (1 - b2) * g1**2 + (1 - b2) * g2**2
    expect2 = expect1 - lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
    assert np.allclose(p.data, expect2, rtol=0, atol=1e-15)


def test_adam_zero_grads_and_symmetry():
    a, b = tc.parameter([[0.3, 0.7]]), tc.parameter([[0.3, 0.7]])
    state = AdamState.zeros([a, b])
    for _ in range(5):
        adam_step(state, [a, b], [np.zeros((1, 2)), np.zeros((1, 2))], 0.1)
    assert a.data.tolist() == [[0.3, 0.7]]
    g = np.array([[0.4, -1.0]])
    for _ in range(3):
        adam_step(state, [a, b], [g, g], 0.1)
    assert np.array_equal(a.data, b.data)


def test_training_is_bitwise_reproducible():
    spec = {"input_width": 2, "loss": "binary_cross_entropy",
            "layers": [{"kind": "dense", "units": 6}, {"kind": "slaf", "degree": 3}, {"kind": "sigmoid_head"}]}
    ds = gen_two_spirals(100, seed=3)
    cfg = TrainConfig(lr=0.01, epochs=3, batch_size=32, metric="accuracy", shuffle_seed=4)
    runs = []
    for _ in range(2):
        model = build(spec, seed=2)
        report = train(model, ds, cfg)
        runs.append((report.losses(), [p.data.copy() for p in model.parameters()]))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(p, q) for p, q in zip(runs[0][1], runs[1][1]))


def test_report_has_validation_metric_rows():
    tr, te = split_dataset(_line_data(50), 0.8, 0)
    report = train(build(LINEAR), tr, TrainConfig(lr=0.01, epochs=3, batch_size=8), val=te)
    assert [r.epoch for r in report.rows] == [1, 2, 3]
    assert all(r.val_metric is not None for r in report.rows)
    assert report.rows[0].csv_row()[0] == "1"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_epoch_and_batch():
    model = build(LINEAR)
    with pytest.raises(DivergenceError, match=r"epoch 1, batch \d") as info:
        train(model, Dataset(np.full((8, 1), 1e200), np.ones(8)), TrainConfig(optimizer="sgd", lr=1.0, epochs=2, batch_size=4))
    assert info.value.report.diverged_at[0] == 1


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train(build(LINEAR), Dataset(np.zeros((0, 1)), np.zeros(0)), TrainConfig())


def test_clip_norm_bounds_step():
    model = build(LINEAR, seed=0)
    W0 = model.parameters()[0].data.copy()
    ds = Dataset(np.full((4, 1), 100.0), np.full(4, -1e4))
    train(model, ds, TrainConfig(optimizer="sgd", lr=1.0, epochs=1, batch_size=4, clip_norm=0.5))
    step = np.sqrt(sum(float(((p.data - q) ** 2).sum()) for p, q in zip(model.parameters()[:1], [W0])))
    assert step <= 0.5 + 1e-9


def test_lasso_zero_penalty_matches_normal_equations():
    rng = np.random.default_rng(0)
    Phi = rng.normal(size=(200, 6))
    y = Phi @ rng.normal(size=6) + 1.5 + rng.normal(0, 0.1, size=200)
    res = lasso_cd(LassoProblem(Phi, y, 0.0, max_sweeps=5000, tol=1e-12))
    A = np.column_stack([Phi, np.ones(200)])
    coef = np.linalg.solve(A.T @ A, A.T @ y)
    assert np.max(np.abs(res.coef - coef[:6])) <= 1e-6
    assert abs(res.intercept - coef[6]) <= 1e-6


def test_lasso_lambda_max_kills_everything():
    rng = np.random.default_rng(1)
    Phi = rng.normal(size=(80, 10))
    y = Phi[:, 0] * 3 + rng.normal(size=80)
    lam = lasso_lambda_max(Phi, y)
    assert np.all(lasso_cd(LassoProblem(Phi, y, lam)).coef == 0)
    assert np.any(lasso_cd(LassoProblem(Phi, y, 0.9 * lam)).coef != 0)


def test_lasso_recovers_sparse_support():
    rng = np.random.default_rng(2)
    Phi = rng.normal(size=(300, 50))
    truth = np.zeros(50)
    support = [3, 11, 20, 37, 44]
    truth[support] = [2.0, -1.5, 1.0, 3.0, -2.5]
    res = lasso_cd(LassoProblem(Phi, Phi @ truth, 1e-3))
    assert sorted(np.nonzero(np.abs(res.coef) > 1e-8)[0].tolist()) == support


def test_lasso_matches_ista_oracle():
    rng = np.random.default_rng(3)
    Phi = rng.normal(size=(120, 8))
    y = Phi @ rng.normal(size=8) + rng.normal(size=120)
    lam = 0.1
    res = lasso_cd(LassoProblem(Phi, y, lam, max_sweeps=10000, tol=1e-12))
    Z = (Phi - Phi.mean(axis=0)) / Phi.std(axis=0)
    w = _ista(Z, y - y.mean(), lam)
    assert np.max(np.abs(res.std_coef - w)) <= 1e-6


def test_lasso_objective_monotone_and_zero_variance_column():
    rng = np.random.default_rng(4)
    Phi = rng.normal(size=(60, 5))
    Phi[:, 2] = 7.0
    y = Phi @ np.array([1.0, 2.0, 0.0, -1.0, 0.5])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = lasso_cd(LassoProblem(Phi, y, 0.05))
    assert res.excluded == [2] and res.coef[2] == 0.0
    assert any("zero-variance" in str(w.message) for w in caught)
    assert all(b <= a + 1e-12 for a, b in zip(res.objective, res.objective[1:]))


def test_lasso_rejects_bad_problems():
    with pytest.raises(ValueError):
        LassoProblem(np.ones((3, 2)), np.ones(3), -1.0)
    with pytest.raises(ValueError):
        LassoProblem(np.array([[np.nan, 1.0]]), np.ones(1), 0.1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(1e-4, 1.0))
def test_lasso_objective_never_increases(seed, lam):
    rng = np.random.default_rng(seed)
    Phi = rng.normal(size=(40, 12))
    y = rng.normal(size=40)
    obj = lasso_cd(LassoProblem(Phi, y, lam)).objective
    assert all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(obj, obj[1:]))


def test_degree_one_lasso_recovers_linear_model():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 3))
    ds = Dataset(X, X @ np.array([1.0, -0.5, 2.0]) + 4.0)
    res = poly_feature_regression(ds, None, 1, "lasso", 0.0, max_sweeps=5000, tol=1e-12)
    assert np.allclose(res.coef, [1.0, -0.5, 2.0], atol=1e-8)
    assert abs(res.intercept - 4.0) <= 1e-8


def test_degree_two_of_thirteen_has_105_columns():
    rng = np.random.default_rng(6)
    ds = Dataset(rng.normal(size=(50, 13)), rng.normal(size=50))
    res = poly_feature_regression(ds, None, 2, "lasso", 0.1)
    assert res.n_features + 1 == 105


def test_sgd_linear_mode_fits():
    rng = np.random.default_rng(7)
    X = rng.uniform(-1, 1, size=(200, 2))
    ds = Dataset(X, X[:, 0] ** 2 - X[:, 1])
    res = poly_feature_regression(ds, ds, 2, "sgd_linear", 0.0, train_config=TrainConfig(lr=0.05, epochs=200, batch_size=200))
    assert res.metrics["train_rmse"] <= 0.02


def test_high_degree_hits_capacity_error():
    ds = Dataset(np.random.default_rng(8).normal(size=(405, 13)), np.zeros(405))
    with pytest.raises(CapacityError):
        poly_feature_regression(ds, None, 8, "lasso", 0.01)


def test_evaluate_metrics():
    ds = Dataset(np.array([[0.0], [1.0]]), np.array([0.0, 3.0]))
    model = build({"input_width": 1, "layers": []})
    assert evaluate(model, ds, "mse") == 2.0
    assert evaluate(model, ds, "rmse") == np.sqrt(2.0)
