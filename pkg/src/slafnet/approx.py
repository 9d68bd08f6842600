"""Polynomial stand-ins for fixed activations, with layerwise error bounds.

A fit of degree ``d`` is a discrete least-squares polynomial on Chebyshev
nodes. Its error ``delta`` is measured on a dense uniform grid and then
inflated by a Lipschitz bound for the grid spacing, so it bounds the error
over the whole interval.

For a network whose activations are replaced by such fits, the deviation
of layer ``l`` obeys

    eps_l = K_l * max_j sum_i |W_l[i, j]| * eps_{l-1} + delta_l,   eps_0 = 0.

:func:`build_approximate_network` fits every unit on its probe range widened
by the incoming margin, deploys the fits as raw SLAF layers and audits the
bound against the observed deviations.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial import polynomial as nppoly

from . import tensorcore as tc
from .network import Activation, Dense, LayerSpec, Model, ModelSpec
from .slaf import SlafLayer

__all__ = [
    "ACTIVATIONS",
    "ConditioningWarning",
    "UnivariateFit",
    "ErrorLedger",
    "LayerAudit",
    "activation_function",
    "least_squares_fit",
    "fit_activation",
    "fit_function",
    "certified_delta",
    "lipschitz_constant",
    "error_recursion",
    "delta_table",
    "write_delta_table",
    "build_approximate_network",
    "layer_deviations",
]

GRID_POINTS = 10_001
COND_LIMIT = 1e10


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return tc.sigmoid(tc.tensor(np.atleast_1d(x))).data.reshape(np.shape(x))


ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
    "sigmoid": _sigmoid,
}
_LIPSCHITZ = {"relu": 1.0, "tanh": 1.0, "sigmoid": 0.25}
# sup |F''|; relu has none
_CURVATURE = {"relu": None, "tanh": 4.0 / (3.0 * 3.0**0.5), "sigmoid": 3.0**0.5 / 18.0}
BASES = ("power", "chebyshev")


class ConditioningWarning(UserWarning):
    pass


def activation_function(name: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}, expected one of {sorted(ACTIVATIONS)}") from None


def lipschitz_constant(name: str) -> float:
    """Analytic ``sup |F'|``: 1 for relu and tanh, 1/4 for sigmoid."""
    if name not in _LIPSCHITZ:
        raise ValueError(f"unknown activation {name!r}")
    return _LIPSCHITZ[name]


@dataclass
class UnivariateFit:
    name: str
    basis: str
    degree: int
    interval: tuple[float, float]
    coefficients: np.ndarray
    sup_error: float
    condition: float = 1.0
    warning: str | None = None
    fit_degree: int | None = None

    def __post_init__(self):
        if self.fit_degree is None:
            self.fit_degree = self.degree

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.basis == "power":
            return nppoly.polyval(x, self.coefficients)
        return npcheb.chebval(_to_window(x, self.interval), self.coefficients)

    def power_coefficients(self) -> np.ndarray:
        """Coefficients ``c`` with ``p(x) = sum_i c[i] x**i``, padded to ``degree + 1``."""
        if self.basis == "power":
            c = np.asarray(self.coefficients, dtype=np.float64)
        else:
            a, b = self.interval
            c = npcheb.Chebyshev(self.coefficients, domain=[a, b]).convert(kind=nppoly.Polynomial).coef
        out = np.zeros(self.degree + 1)
        out[: min(c.size, out.size)] = c[: out.size]
        return out

    def grid(self) -> np.ndarray:
        return np.linspace(self.interval[0], self.interval[1], GRID_POINTS)


def _to_window(x: np.ndarray, interval: tuple[float, float]) -> np.ndarray:
    a, b = interval
    return (2.0 * x - (a + b)) / (b - a)


def chebyshev_nodes(count: int, interval: tuple[float, float]) -> np.ndarray:
    a, b = interval
    k = np.arange(count)
    return 0.5 * (a + b) + 0.5 * (b - a) * np.cos((2 * k + 1) * np.pi / (2 * count))


def _check_interval(interval) -> tuple[float, float]:
    a, b = float(interval[0]), float(interval[1])
    if not a < b:
        raise ValueError(f"interval must satisfy a < b, got [{a}, {b}]")
    return a, b


def least_squares_fit(
    f: Callable[[np.ndarray], np.ndarray],
    degree: int,
    interval,
    basis: str = "chebyshev",
    name: str = "custom",
) -> UnivariateFit:
    """Degree-``degree`` least squares on ``10 (d + 1)`` Chebyshev nodes, solved by QR."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if basis not in BASES:
        raise ValueError(f"unknown basis {basis!r}, expected one of {BASES}")
    interval = _check_interval(interval)
    x = chebyshev_nodes(10 * (degree + 1), interval)
    if basis == "power":
        V = nppoly.polyvander(x, degree)
    else:
        V = npcheb.chebvander(_to_window(x, interval), degree)
    Q, R = np.linalg.qr(V)
    coef = np.linalg.solve(R, Q.T @ f(x))
    cond = float(np.linalg.cond(R))
    warning = None
    if cond > COND_LIMIT:
        warning = f"{basis} basis is ill-conditioned at degree {degree} (cond {cond:.2e})"
        warnings.warn(warning, ConditioningWarning, stacklevel=2)
    fit = UnivariateFit(name, basis, degree, interval, coef, 0.0, cond, warning)
    grid = fit.grid()
    fit.sup_error = float(np.max(np.abs(f(grid) - fit(grid))))
    return fit


def fit_function(
    f: Callable[[np.ndarray], np.ndarray],
    degree: int,
    interval,
    basis: str = "chebyshev",
    name: str = "custom",
) -> UnivariateFit:
    """Best grid error among the least-squares fits of degree ``0 .. degree``.

    Every candidate lies in the space of polynomials of degree at most
    ``degree``, so the reported error cannot grow with ``degree``. Ties keep
    the lower degree.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    best: UnivariateFit | None = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConditioningWarning)
        for d in range(degree + 1):
            cand = least_squares_fit(f, d, interval, basis, name)
            if best is None or cand.sup_error < best.sup_error:
                best = cand
    coef = np.zeros(degree + 1)
    coef[: best.degree + 1] = best.coefficients
    out = UnivariateFit(name, basis, degree, best.interval, coef, best.sup_error, best.condition, best.warning, best.degree)
    if out.warning is None and caught:
        out.warning = str(caught[-1].message)
    if out.warning:
        warnings.warn(out.warning, ConditioningWarning, stacklevel=2)
    return out


def fit_activation(name: str, basis: str = "chebyshev", degree: int = 3, interval=(-3.0, 3.0)) -> UnivariateFit:
    return fit_function(activation_function(name), degree, interval, basis, name)


def _derivative_bound(power_coefs: np.ndarray, interval: tuple[float, float]) -> float:
    r = max(abs(interval[0]), abs(interval[1]))
    return float(sum(i * abs(c) * r ** (i - 1) for i, c in enumerate(power_coefs) if i))


def certified_delta(f: Callable, K: float, power_coefs: np.ndarray, interval, curvature: float | None = None) -> float:
    """Upper bound on ``sup |f - p|`` over the interval, with ``p`` in power form.

    With ``curvature = sup|f''|`` the error is twice differentiable and each
    grid cell adds at most ``h^2 / 8 * sup|f'' - p''|``. Otherwise (relu) the
    error is Lipschitz with constant ``K + sup|p'|`` and a cell adds
    ``(K + sup|p'|) * h / 2``.
    """
    a, b = _check_interval(interval)
    grid = np.linspace(a, b, GRID_POINTS)
    h = (b - a) / (GRID_POINTS - 1)
    c = np.asarray(power_coefs, dtype=np.float64)
    err = float(np.max(np.abs(f(grid) - nppoly.polyval(grid, c))))
    if curvature is not None:
        d2 = nppoly.polyder(c, 2) if c.size > 2 else np.zeros(1)
        return float(err + (curvature + _sup_bound(d2, (a, b))) * h * h / 8.0)
    return float(err + (K + _slope_bound(c, (a, b))) * h / 2.0)


def _sup_bound(power_coefs: np.ndarray, interval: tuple[float, float]) -> float:
    """Upper bound on ``sup |p|``: grid maximum plus a slope allowance of half a cell."""
    a, b = interval
    grid = np.linspace(a, b, GRID_POINTS)
    h = (b - a) / (GRID_POINTS - 1)
    c = np.asarray(power_coefs, dtype=np.float64)
    return float(np.max(np.abs(nppoly.polyval(grid, c)))) + _derivative_bound(c, (a, b)) * h / 2.0


def _slope_bound(power_coefs: np.ndarray, interval: tuple[float, float]) -> float:
    """Upper bound on ``sup |p'|`` over the interval."""
    c = np.asarray(power_coefs, dtype=np.float64)
    return _sup_bound(nppoly.polyder(c) if c.size > 1 else np.zeros(1), interval)


def error_recursion(K: Sequence[float], row_sums: Sequence[float], deltas: Sequence[float]) -> list[float]:
    """``eps_1 .. eps_H`` from ``eps_l = K_l * s_l * eps_{l-1} + delta_l`` with ``eps_0 = 0``."""
    if not len(K) == len(row_sums) == len(deltas):
        raise ValueError("K, row_sums and deltas must have one entry per layer")
    eps, out = 0.0, []
    for k, s, d in zip(K, row_sums, deltas):
        eps = k * s * eps + d
        out.append(eps)
    return out


# -- delta tables ---------------------------------------------------------------

DELTA_COLUMNS = ("activation", "basis", "interval", "degree", "sup_error", "fit_degree")


def delta_table(name: str, basis: str = "chebyshev", interval=(-3.0, 3.0), max_degree: int = 12) -> list[UnivariateFit]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConditioningWarning)
        return [fit_activation(name, basis, d, interval) for d in range(max_degree + 1)]


def write_delta_table(fits: Sequence[UnivariateFit], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DELTA_COLUMNS)
        for f in fits:
            a, b = f.interval
            w.writerow([f.name, f.basis, f"[{a!r},{b!r}]", f.degree, repr(f.sup_error), f.fit_degree])


# -- approximate networks ---------------------------------------------------------


@dataclass
class LayerAudit:
    layer: str
    K: float
    row_sum: float
    delta: float
    eps_bound: float
    eps_empirical: float

    @property
    def sound(self) -> bool:
        return self.eps_empirical <= self.eps_bound


@dataclass
class ErrorLedger:
    rows: list[LayerAudit] = field(default_factory=list)
    fits: list[list[UnivariateFit]] = field(default_factory=list, repr=False)

    COLUMNS = ("layer", "K", "row_sum", "delta", "eps_bound", "eps_empirical")

    @property
    def sound(self) -> bool:
        return all(r.sound for r in self.rows)

    def bounds(self) -> list[float]:
        return [r.eps_bound for r in self.rows]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r.layer, repr(r.K), repr(r.row_sum), repr(r.delta), repr(r.eps_bound), repr(r.eps_empirical)])


@dataclass
class _Target:
    f: Callable[[np.ndarray], np.ndarray]
    lipschitz: Callable[[tuple[float, float]], float]
    curvature: Callable[[tuple[float, float]], float | None]


def _unit_targets(layer, width: int) -> list[_Target]:
    """What each unit of an activation layer computes, with its smoothness bounds."""
    if isinstance(layer, Activation):
        name = layer.name
        K, curv = lipschitz_constant(name), _CURVATURE[name]
        return [_Target(activation_function(name), lambda _iv: K, lambda _iv: curv)] * width
    if isinstance(layer, SlafLayer):
        out = []
        for c in layer.unit_power_coefficients():
            d2 = nppoly.polyder(c, 2) if c.size > 2 else np.zeros(1)
            out.append(_Target(
                lambda x, c=c: nppoly.polyval(x, c),
                lambda iv, c=c: _slope_bound(c, iv),
                lambda iv, d2=d2: _sup_bound(d2, iv),
            ))
        return out
    raise ValueError(f"layer {layer!r} is not an activation")


def _split_reference(model: Model) -> tuple[list[tuple[Dense, object]], Dense | None]:
    """Pairs of (dense, activation) plus an optional final linear dense."""
    if model.head is not None:
        raise ValueError("reference network must end in a linear dense layer or an activation, not a head")
    pairs: list[tuple[Dense, object]] = []
    layers = list(model.layers)
    i = 0
    while i < len(layers):
        layer = layers[i]
        if not isinstance(layer, Dense):
            raise ValueError(f"layer {i} ({getattr(layer, 'kind', layer)}) must be dense; expected dense/activation pairs")
        nxt = layers[i + 1] if i + 1 < len(layers) else None
        if nxt is None:
            return pairs, layer
        if not isinstance(nxt, (Activation, SlafLayer)):
            raise ValueError(f"layer {i + 1} must be an activation, got {getattr(nxt, 'kind', nxt)}")
        pairs.append((layer, nxt))
        i += 2
    return pairs, None


def build_approximate_network(
    reference: Model,
    degree: int,
    probe,
    basis: str = "chebyshev",
) -> tuple[Model, ErrorLedger]:
    """Replace every activation by per-unit degree-``degree`` polynomial fits.

    Returns the approximate model (raw, unnormalized per-unit SLAF layers)
    and the audited error ledger. The last ledger row covers the final linear
    layer when there is one.
    """
    probe = np.asarray(probe, dtype=np.float64)
    if probe.ndim != 2 or probe.shape[0] == 0:
        raise ValueError("probe data must be a non-empty 2-D array")
    pairs, last = _split_reference(reference)
    if not pairs:
        raise ValueError("reference network has no activation layers")

    a_ref, a_app = probe, probe
    eps_prev = 0.0
    ledger = ErrorLedger()
    specs: list[LayerSpec] = []
    layers: list = []
    for idx, (dense, act) in enumerate(pairs, start=1):
        W, b = dense.W.data, dense.b.data[0]
        h_ref = a_ref @ W + b
        h_app = a_app @ W + b
        col_sums = np.abs(W).sum(axis=0)
        margins = col_sums * eps_prev
        targets = _unit_targets(act, W.shape[1])
        fits, coefs, deltas, ks = [], [], [], []
        for j, tgt in enumerate(targets):
            lo, hi = float(h_ref[:, j].min()), float(h_ref[:, j].max())
            lo, hi = lo - margins[j], hi + margins[j]
            if hi - lo < 1e-9:
                lo, hi = lo - 0.5e-9, hi + 0.5e-9
            fit = fit_function(tgt.f, degree, (lo, hi), basis, getattr(act, "name", "slaf"))
            c = fit.power_coefficients()
            K = tgt.lipschitz((lo, hi))
            fits.append(fit)
            coefs.append(c)
            ks.append(K)
            deltas.append(certified_delta(tgt.f, K, c, (lo, hi), tgt.curvature((lo, hi))))
        K_layer, delta_layer, row_sum = max(ks), max(deltas), float(col_sums.max())
        eps = K_layer * row_sum * eps_prev + delta_layer
        a_ref = np.stack([t.f(h_ref[:, j]) for j, t in enumerate(targets)], axis=1)
        coef_mat = np.vstack(coefs)
        a_app = np.stack([nppoly.polyval(h_app[:, j], coef_mat[j]) for j in range(coef_mat.shape[0])], axis=1)
        ledger.rows.append(LayerAudit(f"hidden{idx}", K_layer, row_sum, delta_layer, eps, float(np.max(np.abs(a_ref - a_app)))))
        ledger.fits.append(fits)
        width = W.shape[1]
        specs += [LayerSpec("dense", units=width), LayerSpec("slaf", degree=degree, mode="per_unit", normalize=False)]
        layers += [Dense(W.copy(), b.copy()), SlafLayer(degree, width, "per_unit", normalize=False, coefficients=coef_mat)]
        eps_prev = eps
    if last is not None:
        W, b = last.W.data, last.b.data[0]
        out_ref, out_app = a_ref @ W + b, a_app @ W + b
        row_sum = float(np.abs(W).sum(axis=0).max())
        ledger.rows.append(LayerAudit("output", 1.0, row_sum, 0.0, row_sum * eps_prev, float(np.max(np.abs(out_ref - out_app)))))
        specs.append(LayerSpec("dense", units=W.shape[1]))
        layers.append(Dense(W.copy(), b.copy()))
    spec = ModelSpec(reference.spec.input_width, specs, reference.spec.loss, {})
    spec.validate()
    return Model(spec, layers, reference.seed), ledger


def layer_deviations(reference: Model, approx: Model, X) -> list[float]:
    """Max absolute deviation after each activation (and at the output), by forward pass."""
    X = np.asarray(X, dtype=np.float64)
    out: list[float] = []
    with tc.no_grad():
        a, b = tc.tensor(X), tc.tensor(X)
        for lr, la in zip(reference.layers, approx.layers):
            a, b = lr.forward(a), la.forward(b)
            if not isinstance(lr, Dense):
                out.append(float(np.max(np.abs(a.data - b.data))))
        if isinstance(reference.layers[-1], Dense):
            out.append(float(np.max(np.abs(a.data - b.data))))
    return out
