"""Self-learnable activation layer: a learned polynomial applied per feature.

For input ``x`` the layer forms the powers ``x^1 .. x^k``, normalizes each
power to zero mean and unit variance, and returns

    a'_0 + a'_1 * xh_1 + ... + a'_k * xh_k

where ``xh_i = (x^i - mean_i) / sqrt(var_i + eps)``. In the training phase
the statistics come from the current batch and gradients flow through them;
exponential running averages are kept for the evaluation phase, where the
layer is a fixed polynomial of degree ``k`` in its input.

The constant basis element is never normalized, so ``a'_0`` is a bias.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor

__all__ = [
    "SlafLayer",
    "UninitializedStatsError",
    "NonFiniteInputError",
    "slaf_degree_of_network",
    "slaf_l2_penalty",
    "slaf_update_stats",
]

MODES = ("shared", "per_unit")


class UninitializedStatsError(RuntimeError):
    """Evaluation-phase forward before any training-phase statistics exist."""


class NonFiniteInputError(ValueError):
    pass


class SlafLayer:
    """Learnable polynomial activation of degree ``degree`` over ``units`` features.

    ``mode="shared"`` keeps one coefficient row ``1 x (k+1)`` for the whole
    layer; ``mode="per_unit"`` keeps ``units x (k+1)``.
    """

    kind = "slaf"

    def __init__(
        self,
        degree: int,
        units: int,
        mode: str = "shared",
        *,
        momentum: float = 0.99,
        eps: float = 1e-5,
        normalize: bool = True,
        init_noise: float = 0.01,
        rng: np.random.Generator | None = None,
        coefficients=None,
    ):
        if degree < 1:
            raise ValueError(f"SLAF degree must be >= 1, got {degree}")
        if mode not in MODES:
            raise ValueError(f"unknown SLAF mode {mode!r}, expected one of {MODES}")
        if units < 1:
            raise ValueError("SLAF layer needs at least one unit")
        self.degree = int(degree)
        self.units = int(units)
        self.mode = mode
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.normalize = bool(normalize)
        rows = 1 if mode == "shared" else self.units
        if coefficients is None:
            init = np.zeros((rows, self.degree + 1))
            init[:, 1] = 1.0
            if init_noise:
                rng = rng if rng is not None else np.random.default_rng()
                init += rng.normal(0.0, init_noise, size=init.shape)
        else:
            init = np.asarray(coefficients, dtype=np.float64).reshape(rows, self.degree + 1)
        self.coeffs = tc.parameter(init, name="slaf.coeffs")
        self.running_mean = np.zeros((self.degree, self.units))
        self.running_var = np.ones((self.degree, self.units))
        self.stats_initialized = False

    # -- parameters and state --------------------------------------------

    def parameters(self) -> list[Tensor]:
        return [self.coeffs]

    def coefficient_rows(self) -> np.ndarray:
        """Coefficients as a ``units x (k+1)`` array regardless of mode."""
        c = self.coeffs.data
        return np.broadcast_to(c, (self.units, self.degree + 1)).copy() if self.mode == "shared" else c.copy()

    def state_dict(self) -> dict:
        return {
            "degree": self.degree,
            "units": self.units,
            "mode": self.mode,
            "momentum": self.momentum,
            "eps": self.eps,
            "normalize": self.normalize,
            "coeffs": self.coeffs.data.tolist(),
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
            "stats_initialized": self.stats_initialized,
        }

    @classmethod
    def from_state(cls, state: dict) -> "SlafLayer":
        layer = cls(
            state["degree"],
            state["units"],
            state["mode"],
            momentum=state["momentum"],
            eps=state["eps"],
            normalize=state["normalize"],
            coefficients=state["coeffs"],
        )
        layer.running_mean = _shaped(state["running_mean"], (layer.degree, layer.units), "running_mean")
        layer.running_var = _shaped(state["running_var"], (layer.degree, layer.units), "running_var")
        layer.stats_initialized = bool(state["stats_initialized"])
        return layer

    # -- forward -----------------------------------------------------------

    def basis(self, x: Tensor, train: bool, update_stats: bool = True) -> list[Tensor]:
        """Normalized powers ``xh_1 .. xh_k`` (the constant is implicit)."""
        if x.cols != self.units:
            raise tc.ShapeError(f"SLAF layer has {self.units} units, input has {x.cols} columns")
        if not x.is_finite():
            raise NonFiniteInputError("SLAF input contains NaN or Inf")
        if self.normalize and not train and not self.stats_initialized:
            raise UninitializedStatsError("SLAF layer has no running statistics yet; run a training-phase pass first")
        out: list[Tensor] = []
        means, variances = [], []
        p = x
        for i in range(1, self.degree + 1):
            if i > 1:
                p = tc.mul(p, x)
            if not self.normalize:
                out.append(p)
                continue
            if train:
                mean, var = tc.batch_stats(p)
                means.append(mean.data[0])
                variances.append(var.data[0])
                out.append(tc.div(tc.sub(p, mean), tc.sqrt(tc.add(var, self.eps))))
            else:
                mu = self.running_mean[i - 1]
                scale = 1.0 / np.sqrt(self.running_var[i - 1] + self.eps)
                out.append(tc.mul(tc.sub(p, tc.tensor(mu)), tc.tensor(scale)))
        if self.normalize and train and update_stats:
            slaf_update_stats(self, np.array(means), np.array(variances))
        return out

    def forward(self, x: Tensor, train: bool = False, update_stats: bool = True) -> Tensor:
        return tc.basis_combine(self.basis(x, train, update_stats), self.coeffs)

    __call__ = forward

    # -- fixed polynomial view --------------------------------------------

    def unit_power_coefficients(self) -> np.ndarray:
        """Evaluation-phase polynomial of every unit, ``units x (k+1)`` power coefficients.

        Row ``j`` holds ``c`` with ``f_j(x) = sum_i c[i] * x**i``.
        """
        if self.normalize and not self.stats_initialized:
            raise UninitializedStatsError("SLAF layer has no running statistics yet")
        rows = self.coefficient_rows()
        out = np.zeros_like(rows)
        out[:, 0] = rows[:, 0]
        for i in range(1, self.degree + 1):
            if self.normalize:
                scale = 1.0 / np.sqrt(self.running_var[i - 1] + self.eps)
                out[:, i] += rows[:, i] * scale
                out[:, 0] -= rows[:, i] * scale * self.running_mean[i - 1]
            else:
                out[:, i] += rows[:, i]
        return out

    def __repr__(self) -> str:
        return f"SlafLayer(degree={self.degree}, units={self.units}, mode={self.mode!r})"


def _shaped(values, shape: tuple[int, int], what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{what} has shape {arr.shape}, expected {shape}")
    return arr


def slaf_update_stats(layer: SlafLayer, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
    """Exponential averaging of per-power statistics; the first batch initializes them.

    ``batch_mean`` and ``batch_var`` are ``degree x units``.
    """
    batch_mean = np.asarray(batch_mean, dtype=np.float64).reshape(layer.degree, layer.units)
    batch_var = np.asarray(batch_var, dtype=np.float64).reshape(layer.degree, layer.units)
    if not layer.stats_initialized:
        layer.running_mean = batch_mean.copy()
        layer.running_var = batch_var.copy()
        layer.stats_initialized = True
        return
    m = layer.momentum
    layer.running_mean = m * layer.running_mean + (1.0 - m) * batch_mean
    layer.running_var = m * layer.running_var + (1.0 - m) * batch_var


def slaf_degree_of_network(degrees: Sequence[int]) -> int:
    """Total degree of a stack of SLAF layers: the product of their degrees."""
    for k in degrees:
        if k < 1:
            raise ValueError(f"SLAF degrees must be >= 1, got {k}")
    return math.prod(int(k) for k in degrees)


def slaf_l2_penalty(layer: SlafLayer) -> Tensor:
    """Sum of squared coefficients, as a differentiable scalar."""
    return tc.total(tc.mul(layer.coeffs, layer.coeffs))
