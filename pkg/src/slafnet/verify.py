"""Self-checks behind ``slafnet verify``.

Each suite returns a list of :class:`Check` results with the measured value
and its threshold, so reports can be diffed across runs.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import tensorcore as tc
from .approx import build_approximate_network, delta_table, lipschitz_constant, activation_function
from .extract import FlattenError, equivalence_check, flatten
from .network import Dense, Model, ModelSpec, build
from .polybasis import (
    Polynomial,
    basis_cardinality,
    enumerate_basis,
    monomial_product_closure_check,
    poly_pow,
)
from .slaf import SlafLayer

__all__ = ["Check", "SUITES", "run_suite", "run_all", "random_slnn", "calibrate"]


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    value: float | None = None
    threshold: float | None = None
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        val = "" if self.value is None else f" value={self.value:.3e}"
        thr = "" if self.threshold is None else f" threshold={self.threshold:.1e}"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.suite}.{self.name}{val}{thr}{extra}"

    def to_dict(self) -> dict:
        return asdict(self)


# -- helpers ------------------------------------------------------------------


def calibrate(model: Model, rng: np.random.Generator, rows: int = 64, box: float = 1.0) -> None:
    """One training-phase pass on uniform data so every normalizer has statistics."""
    with tc.no_grad():
        model.logits(rng.uniform(-box, box, size=(rows, model.spec.input_width)), "train")


def random_slnn(
    rng: np.random.Generator,
    max_inputs: int = 4,
    max_depth: int = 3,
    max_degree: int = 3,
    max_width: int = 8,
) -> Model:
    """Random calibrated SLNN: ``dense -> slaf`` blocks followed by a linear layer."""
    n = int(rng.integers(1, max_inputs + 1))
    layers = []
    for _ in range(int(rng.integers(1, max_depth + 1))):
        layers.append({"kind": "dense", "units": int(rng.integers(1, max_width + 1))})
        layers.append({
            "kind": "slaf",
            "degree": int(rng.integers(1, max_degree + 1)),
            "mode": "per_unit" if rng.random() < 0.5 else "shared",
        })
    layers.append({"kind": "dense", "units": int(rng.integers(1, 3))})
    model = build(ModelSpec.from_dict({"input_width": n, "layers": layers, "loss": "mse"}), int(rng.integers(2**31)))
    for layer in model.slaf_layers():
        layer.coeffs.data[...] = rng.uniform(-1.0, 1.0, size=layer.coeffs.shape)
    calibrate(model, rng)
    return model


# -- basis ----------------------------------------------------------------------


def suite_basis(seed: int = 0, **_) -> list[Check]:
    out = []
    bad = [(n, k) for n in range(1, 7) for k in range(0, 7) if basis_cardinality(n, k) != len(enumerate_basis(n, k))]
    out.append(Check("basis", "cardinality_matches_enumeration", not bad, float(len(bad)), 0.0, f"n<=6, k<=6; mismatches {bad}" if bad else "n<=6, k<=6"))
    spot = basis_cardinality(13, 8)
    out.append(Check("basis", "cardinality_n13_k8", spot == 203490, float(spot), 203490.0))
    order = [b.exponents for b in enumerate_basis(2, 2)]
    out.append(Check("basis", "graded_lex_order", order == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]))
    fails = [(n, a, b) for n in range(1, 5) for a in range(0, 4) for b in range(0, 4) if not monomial_product_closure_check(n, a, b)]
    out.append(Check("basis", "product_closure", not fails, float(len(fails)), 0.0, "n<=4, k1,k2<=3"))
    rng = np.random.default_rng(seed)
    worst = 0
    for _ in range(20):
        n = int(rng.integers(1, 4))
        d = int(rng.integers(1, 4))
        # a positive leading term in one variable cannot cancel under powers
        terms = {tuple(int(x) for x in rng.multinomial(int(rng.integers(0, d)), [1 / n] * n)): float(rng.normal()) for _ in range(3)}
        lead = [0] * n
        lead[0] = d
        terms[tuple(lead)] = 1.0 + float(rng.random())
        p = Polynomial(n, terms)
        for i in range(1, 5):
            worst = max(worst, abs(poly_pow(p, i).degree - i * p.degree))
    out.append(Check("basis", "power_degree_multiplies", worst == 0, float(worst), 0.0))
    return out


# -- gradients --------------------------------------------------------------------


def _grad_models() -> dict[str, dict]:
    dense = {"kind": "dense", "units": 3}
    return {
        "dense": {"input_width": 3, "layers": [dense, {"kind": "dense", "units": 2}], "loss": "mse"},
        "batchnorm": {"input_width": 3, "layers": [dense, {"kind": "batchnorm"}, {"kind": "dense", "units": 2}], "loss": "mse"},
        "relu": {"input_width": 3, "layers": [dense, {"kind": "activation", "activation": "relu"}, {"kind": "dense", "units": 2}], "loss": "mse"},
        "tanh": {"input_width": 3, "layers": [dense, {"kind": "activation", "activation": "tanh"}, {"kind": "dense", "units": 2}], "loss": "mse"},
        "sigmoid": {"input_width": 3, "layers": [dense, {"kind": "activation", "activation": "sigmoid"}, {"kind": "dense", "units": 2}], "loss": "mse"},
        "slaf_shared": {"input_width": 3, "layers": [dense, {"kind": "slaf", "degree": 3}, {"kind": "dense", "units": 2}], "loss": "mse"},
        "slaf_per_unit": {"input_width": 3, "layers": [dense, {"kind": "slaf", "degree": 3, "mode": "per_unit"}, {"kind": "dense", "units": 2}], "loss": "mse"},
        "binary_cross_entropy": {"input_width": 3, "layers": [dense, {"kind": "slaf", "degree": 2}, {"kind": "sigmoid_head"}], "loss": "binary_cross_entropy"},
        "categorical_cross_entropy": {"input_width": 3, "layers": [dense, {"kind": "slaf", "degree": 2}, {"kind": "softmax_head", "classes": 3}], "loss": "categorical_cross_entropy"},
        "l2_weights": {"input_width": 3, "layers": [dense, {"kind": "activation", "activation": "tanh"}, {"kind": "dense", "units": 2}], "loss": "mse", "regularizers": {"l2_weights": 0.1}},
        "l2_slaf_coeffs": {"input_width": 3, "layers": [dense, {"kind": "slaf", "degree": 2}, {"kind": "dense", "units": 2}], "loss": "mse", "regularizers": {"l2_slaf_coeffs": 0.1}},
        "l1_first_layer": {"input_width": 3, "layers": [dense, {"kind": "slaf", "degree": 2}, {"kind": "dense", "units": 2}], "loss": "mse", "regularizers": {"l1_first_layer": 0.1}},
    }


def _targets(spec: ModelSpec, rng: np.random.Generator, rows: int) -> np.ndarray:
    if spec.loss == "binary_cross_entropy":
        return rng.integers(0, 2, size=(rows, 1)).astype(float)
    if spec.loss == "categorical_cross_entropy":
        return rng.integers(0, 3, size=(rows, 1)).astype(float)
    return rng.normal(size=(rows, 2))


def slaf_coefficient_gradient_error(seed: int = 0, mode: str = "shared") -> float:
    """Autodiff gradient of ``sum(G * SLAF(x))`` w.r.t. coefficients vs ``sum(G * xh_i)``."""
    rng = np.random.default_rng(seed)
    layer = SlafLayer(4, 3, mode, rng=rng)
    x = rng.normal(size=(16, 3))
    G = rng.normal(size=x.shape)
    out = tc.total(tc.mul(layer.forward(tc.tensor(x), train=True), tc.tensor(G)))
    tc.backward(out)
    cols = [np.ones_like(x)]
    for i in range(1, layer.degree + 1):
        p = x**i
        cols.append((p - p.mean(axis=0)) / np.sqrt(p.var(axis=0) + layer.eps))
    per_unit = np.stack([(G * c).sum(axis=0) for c in cols], axis=1)
    expected = per_unit.sum(axis=0, keepdims=True) if mode == "shared" else per_unit
    return float(np.max(np.abs(layer.coeffs.grad - expected)))


def suite_grad(seed: int = 0, **_) -> list[Check]:
    out = []
    rng = np.random.default_rng(seed)
    for name, doc in _grad_models().items():
        spec = ModelSpec.from_dict(doc)
        model = build(spec, seed)
        x = rng.normal(size=(12, 3))
        y = _targets(spec, rng, 12)
        calibrate(model, rng)
        err = tc.grad_check(lambda: model.loss(x, y, "train", update_stats=False), model.parameters())
        out.append(Check("grad", name, err <= 1e-4, err, 1e-4))
    for mode in ("shared", "per_unit"):
        err = slaf_coefficient_gradient_error(seed, mode)
        out.append(Check("grad", f"slaf_coefficients_analytic_{mode}", err <= 1e-10, err, 1e-10))
    return out


# -- extract ----------------------------------------------------------------------


def suite_extract(seed: int = 0, models: int = 50, inject_perturbation: bool = False, **_) -> list[Check]:
    out = []
    rng = np.random.default_rng(seed)
    worst, degree_gap = 0.0, 0
    for _ in range(models):
        model = random_slnn(rng)
        flat = flatten(model)
        if inject_perturbation:
            flat.W[0, 0] += 1e-2
        worst = max(worst, equivalence_check(model, flat, 1000, seed=int(rng.integers(2**31))))
        degree_gap = max(degree_gap, max(p.degree for p in flat.output_polynomials()) - model.degree())
    detail = f"{models} random SLNNs" + (", perturbation injected" if inject_perturbation else "")
    out.append(Check("extract", "random_slnn_equivalence", worst <= 1e-6, worst, 1e-6, detail))
    out.append(Check("extract", "degree_at_most_product", degree_gap <= 0, float(degree_gap), 0.0))
    ident = Model(ModelSpec.from_dict({"input_width": 3, "layers": [{"kind": "dense", "units": 3}], "loss": "mse"}), [Dense(np.eye(3), np.zeros(3))])
    err = equivalence_check(ident, flatten(ident), 1000, seed=seed)
    out.append(Check("extract", "identity_model", err <= 1e-12, err, 1e-12))
    relu = build({"input_width": 2, "layers": [{"kind": "dense", "units": 2}, {"kind": "activation", "activation": "relu"}, {"kind": "dense", "units": 1}], "loss": "mse"}, seed)
    try:
        flatten(relu)
        refused = False
    except FlattenError:
        refused = True
    out.append(Check("extract", "refuses_relu", refused))
    return out


# -- approx -------------------------------------------------------------------------


def relu_reference(seed: int = 0, n_inputs: int = 3) -> Model:
    """Two hidden relu layers of width 8 with weights uniform in [-1, 1]."""
    spec = {
        "input_width": n_inputs,
        "layers": [
            {"kind": "dense", "units": 8}, {"kind": "activation", "activation": "relu"},
            {"kind": "dense", "units": 8}, {"kind": "activation", "activation": "relu"},
            {"kind": "dense", "units": 1},
        ],
        "loss": "mse",
    }
    model = build(spec, seed)
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        if isinstance(layer, Dense):
            layer.W.data[...] = rng.uniform(-1.0, 1.0, size=layer.W.shape)
            layer.b.data[...] = rng.uniform(-1.0, 1.0, size=layer.b.shape)
    return model


def suite_approx(seed: int = 0, **_) -> list[Check]:
    out = []
    for name in ("relu", "tanh", "sigmoid"):
        errs = [f.sup_error for f in delta_table(name, "chebyshev", (-3.0, 3.0), 12)]
        rises = sum(1 for a, b in zip(errs, errs[1:]) if b > a)
        out.append(Check("approx", f"delta_monotone_{name}", rises == 0, float(rises), 0.0, "[-3, 3], d = 0..12"))
        grid = np.linspace(-6.0, 6.0, 200_001)
        slope = float(np.max(np.abs(np.diff(activation_function(name)(grid)) / np.diff(grid))))
        K = lipschitz_constant(name)
        out.append(Check("approx", f"lipschitz_{name}", slope <= K + 1e-9, slope, K + 1e-9))
    rng = np.random.default_rng(seed)
    ref = relu_reference(seed)
    probe = rng.uniform(-1.0, 1.0, size=(2000, ref.spec.input_width))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, ledger = build_approximate_network(ref, 9, probe)
    slack = min(r.eps_bound - r.eps_empirical for r in ledger.rows)
    out.append(Check("approx", "relu_audit_sound", ledger.sound, slack, 0.0, "min of eps_bound - eps_empirical over layers"))
    return out


SUITES: dict[str, Callable[..., list[Check]]] = {
    "basis": suite_basis,
    "grad": suite_grad,
    "extract": suite_extract,
    "approx": suite_approx,
}


def run_suite(name: str, seed: int = 0, inject_perturbation: bool = False) -> list[Check]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}, expected one of {sorted(SUITES)} or 'all'")
    return SUITES[name](seed=seed, inject_perturbation=inject_perturbation)


def run_all(seed: int = 0, inject_perturbation: bool = False) -> list[Check]:
    return [c for name in SUITES for c in run_suite(name, seed, inject_perturbation)]
