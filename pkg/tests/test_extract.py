import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slafnet.extract import (
    FlattenError,
    FlattenedModel,
    UnsupportedHeadError,
    equivalence_check,
    flatten,
    flatten_penultimate,
    parameter_bound,
)
from slafnet.network import Dense, Model, ModelSpec, build, deserialize, serialize
from slafnet.polybasis import CapacityError, Polynomial, enumerate_basis, poly_eval_batch
from slafnet.verify import calibrate, random_slnn


def _raw_square_model():
    spec = {"input_width": 1, "layers": [{"kind": "dense", "units": 1}, {"kind": "slaf", "degree": 2, "normalize": False}]}
    model = build(spec)
    model.layers[0].W.data[...] = 1.0
    model.layers[0].b.data[...] = 0.0
    model.layers[1].coeffs.data[...] = [0.0, 0.0, 1.0]
    return model


def _identity(n):
    spec = ModelSpec.from_dict({"input_width": n, "layers": [{"kind": "dense", "units": n}]})
    return Model(spec, [Dense(np.eye(n), np.zeros(n))])


def _two_slaf(seed, n=3, k1=2, k2=3):
    rng = np.random.default_rng(seed)
    spec = {"input_width": n, "layers": [
        {"kind": "dense", "units": 4}, {"kind": "slaf", "degree": k1, "mode": "per_unit"},
        {"kind": "dense", "units": 3}, {"kind": "slaf", "degree": k2},
        {"kind": "dense", "units": 2},
    ]}
    model = build(spec, seed)
    for layer in model.slaf_layers():
        layer.coeffs.data[...] = rng.uniform(-1, 1, size=layer.coeffs.shape)
    calibrate(model, rng)
    return model


def test_square_example():
    flat = flatten(_raw_square_model())
    assert flat.output_polynomials()[0] == Polynomial(1, {(2,): 1.0})
    assert flat.W.shape == (1, 3)
    assert flat.W.tolist() == [[0.0, 0.0, 1.0]]


def test_identity_flattens_to_variables():
    model = _identity(3)
    flat = flatten(model)
    assert flat.output_polynomials() == [Polynomial.variable(3, i) for i in range(3)]
    assert equivalence_check(model, flat, 1000) <= 1e-12


def test_empty_model_flattens_to_variables():
    model = build({"input_width": 2, "layers": []})
    assert flatten(model).output_polynomials() == [Polynomial.variable(2, 0), Polynomial.variable(2, 1)]


def test_random_two_slaf_network():
    model = _two_slaf(0)
    flat = flatten(model)
    assert flat.degree == 6
    assert max(p.degree for p in flat.output_polynomials()) <= 6
    assert equivalence_check(model, flat, 1000, box=(-1, 1), seed=1) <= 1e-6
    assert [b for b in flat.basis] == enumerate_basis(3, 6)
    assert flat.W.shape == (2, len(enumerate_basis(3, 6)))


def test_w_rows_reproduce_polynomials():
    model = _two_slaf(1)
    flat = flatten(model)
    X = np.random.default_rng(0).uniform(-1, 1, size=(50, 3))
    for j, p in enumerate(flat.output_polynomials()):
        assert np.allclose(flat.linear(X)[:, j], poly_eval_batch(p, X), rtol=1e-12, atol=1e-12)


def test_perturbation_is_detected():
    model = _two_slaf(2)
    flat = flatten(model)
    flat.W[0, 0] += 1e-2
    assert equivalence_check(model, flat, 1000) > 1e-4


def test_parameter_bound_examples():
    spec = {"input_width": 13, "layers": [
        {"kind": "dense", "units": 16}, {"kind": "slaf", "degree": 4},
        {"kind": "dense", "units": 16}, {"kind": "slaf", "degree": 2},
        {"kind": "dense", "units": 1},
    ]}
    model = build(spec)
    calibrate(model, np.random.default_rng(0))
    actual, bound = parameter_bound(model)
    assert bound == 203490 and actual == model.parameter_count()


def test_depth_zero_actual_equals_bound():
    model = build({"input_width": 4, "layers": [{"kind": "dense", "units": 2}]})
    actual, bound = parameter_bound(model)
    assert actual == bound == 10


def test_refuses_fixed_activations():
    for act in ("relu", "tanh", "sigmoid"):
        model = build({"input_width": 2, "layers": [
            {"kind": "dense", "units": 3}, {"kind": "activation", "activation": act}, {"kind": "dense", "units": 1}]})
        with pytest.raises(FlattenError, match=act):
            flatten(model)


def test_refuses_uncalibrated_and_heads():
    model = build({"input_width": 2, "loss": "binary_cross_entropy", "layers": [
        {"kind": "dense", "units": 3}, {"kind": "slaf", "degree": 2}, {"kind": "sigmoid_head"}]})
    with pytest.raises(FlattenError, match="statistics"):
        flatten_penultimate(model)
    calibrate(model, np.random.default_rng(0))
    with pytest.raises(UnsupportedHeadError):
        flatten(model)


def test_penultimate_on_classifier():
    model = build({"input_width": 2, "loss": "binary_cross_entropy", "layers": [
        {"kind": "dense", "units": 4}, {"kind": "slaf", "degree": 3},
        {"kind": "dense", "units": 4}, {"kind": "slaf", "degree": 2}, {"kind": "sigmoid_head"}]}, seed=3)
    rng = np.random.default_rng(1)
    calibrate(model, rng)
    flat = flatten_penultimate(model)
    assert flat.head == "sigmoid" and flat.degree == 6
    grid = np.stack(np.meshgrid(np.linspace(-1, 1, 32), np.linspace(-1, 1, 32)), -1).reshape(-1, 2)
    assert equivalence_check(model, flat, points=grid) <= 1e-6
    assert np.allclose(flat.predict(grid), model.predict(grid), rtol=0, atol=1e-9)


def test_penultimate_on_linear_head_equals_flatten():
    model = _two_slaf(4)
    a, b = flatten(model), flatten_penultimate(model)
    assert np.array_equal(a.W, b.W) and b.head is None


def test_logistic_regression_is_depth_zero():
    model = build({"input_width": 3, "loss": "binary_cross_entropy", "layers": [{"kind": "sigmoid_head"}]}, seed=0)
    flat = flatten_penultimate(model)
    W, b = model.layers[0].dense.W.data[:, 0], model.layers[0].dense.b.data[0, 0]
    assert flat.W.tolist() == [[b, *W]]


def test_capacity_cap_refuses():
    model = _two_slaf(5, n=3, k1=3, k2=3)
    with pytest.raises(CapacityError):
        flatten(model, cap=50)


def test_text_round_trip():
    flat = flatten(_two_slaf(6))
    text = flat.to_text()
    assert text.startswith("# flattened-model v1")
    again = FlattenedModel.from_text(text)
    assert again.nvars == flat.nvars and again.degree == flat.degree
    assert np.allclose(again.W, flat.W, rtol=1e-15, atol=0)
    assert again.provenance == flat.provenance


def test_flatten_invariant_under_serialization():
    model = _two_slaf(7)
    clone = deserialize(serialize(model))
    assert np.array_equal(flatten(model).W, flatten(clone).W)


def test_equivalence_nvars_mismatch():
    with pytest.raises(ValueError):
        equivalence_check(_identity(2), flatten(_identity(3)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_slnn_equivalence_and_degree(seed):
    rng = np.random.default_rng(seed)
    model = random_slnn(rng)
    flat = flatten(model)
    assert equivalence_check(model, flat, 1000, seed=seed % 1000) <= 1e-6
    assert max(p.degree for p in flat.output_polynomials()) <= model.degree()
