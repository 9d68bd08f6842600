"""Flatten an evaluation-phase SLAF network into ``Y = W @ X^B``.

Every neuron is carried as a :class:`~slafnet.polybasis.Polynomial` in the
model inputs. Dense layers are affine combinations, batchnorm in the
evaluation phase is a per-unit affine map, and a SLAF unit is a fixed
univariate polynomial composed with its input polynomial. The result is
materialized as a dense matrix over the full graded-lex basis of degree
``k = prod(k_i)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensorcore as tc
from .network import Activation, BatchNorm, Dense, Head, Model
from .polybasis import (
    MultiIndex,
    Polynomial,
    basis_cardinality,
    enumerate_basis,
    expand_features,
    format_polynomial,
    parse_polynomial,
    poly_mul,
    poly_sum,
)
from .slaf import SlafLayer

__all__ = [
    "FlattenError",
    "UnsupportedHeadError",
    "FlattenedModel",
    "flatten",
    "flatten_penultimate",
    "parameter_bound",
    "equivalence_check",
    "symbolic_forward",
]


class FlattenError(ValueError):
    """The model contains a layer with no polynomial form."""


class UnsupportedHeadError(FlattenError):
    pass


@dataclass
class FlattenedModel:
    nvars: int
    degree: int
    basis: list[MultiIndex]
    W: np.ndarray
    provenance: str
    head: str | None = None
    polynomials: list[Polynomial] = field(default_factory=list, repr=False)

    @property
    def outputs(self) -> int:
        return self.W.shape[0]

    def features(self, X) -> np.ndarray:
        return expand_features(np.asarray(X, dtype=np.float64), self.basis)

    def linear(self, X) -> np.ndarray:
        """``X^B @ W.T``: the flattened part, before any head."""
        return self.features(X) @ self.W.T

    def predict(self, X) -> np.ndarray:
        z = self.linear(X)
        if self.head == "sigmoid":
            return tc.sigmoid(tc.tensor(z)).data
        if self.head == "softmax":
            return tc.softmax(tc.tensor(z)).data
        return z

    def to_text(self) -> str:
        lines = [
            "# flattened-model v1",
            f"# nvars={self.nvars} degree={self.degree} outputs={self.outputs} basis_size={len(self.basis)}",
            "# basis order: graded-lex (total degree ascending, then exponents descending)",
            f"# head={self.head or 'none'}",
            f"# provenance={self.provenance}",
        ]
        for j, p in enumerate(self.output_polynomials()):
            lines.append(f"# output {j}")
            lines.append(format_polynomial(p).rstrip("\n"))
        return "\n".join(lines) + "\n"

    def output_polynomials(self) -> list[Polynomial]:
        if self.polynomials:
            return self.polynomials
        return [_row_to_polynomial(self.nvars, self.basis, row) for row in self.W]

    @classmethod
    def from_text(cls, text: str) -> "FlattenedModel":
        meta: dict[str, str] = {}
        chunks: list[list[str]] = []
        for line in text.splitlines():
            s = line.strip()
            if s.startswith("# output"):
                chunks.append([])
            elif s.startswith("#"):
                if not chunks:
                    for tok in s[1:].split():
                        if "=" in tok:
                            k, v = tok.split("=", 1)
                            meta[k] = v
                else:
                    chunks[-1].append(s)
            elif s:
                if not chunks:
                    raise ValueError("polynomial term before any '# output' marker")
                chunks[-1].append(s)
        try:
            n, k = int(meta["nvars"]), int(meta["degree"])
        except KeyError as exc:
            raise ValueError(f"flattened-model header is missing {exc.args[0]!r}") from None
        basis = enumerate_basis(n, k)
        polys = [parse_polynomial("\n".join(c), n) for c in chunks]
        head = meta.get("head", "none")
        return cls(
            n, k, basis, _dense_matrix(polys, basis), meta.get("provenance", ""),
            None if head == "none" else head, polys,
        )


def _row_to_polynomial(n: int, basis: Sequence[MultiIndex], row: np.ndarray) -> Polynomial:
    return Polynomial(n, {b.exponents: c for b, c in zip(basis, row) if c != 0.0})


def _dense_matrix(polys: Sequence[Polynomial], basis: Sequence[MultiIndex]) -> np.ndarray:
    index = {b.exponents: c for c, b in enumerate(basis)}
    W = np.zeros((len(polys), len(basis)))
    for j, p in enumerate(polys):
        for e, c in zip(p.exponents.tolist(), p.coefficients):
            try:
                W[j, index[tuple(e)]] = c
            except KeyError:
                raise FlattenError(f"term {tuple(e)} exceeds the basis degree") from None
    return W


# -- symbolic forward pass ------------------------------------------------------


def _dense(polys: list[Polynomial], W: np.ndarray, b: np.ndarray) -> list[Polynomial]:
    return [poly_sum(polys, W[:, j], float(b[j])) for j in range(W.shape[1])]


def _slaf(polys: list[Polynomial], layer: SlafLayer, cap: int | None) -> list[Polynomial]:
    coefs = layer.unit_power_coefficients()
    out = []
    for j, p in enumerate(polys):
        powers = [p]
        for _ in range(2, layer.degree + 1):
            powers.append(poly_mul(powers[-1], p, cap))
        out.append(poly_sum(powers, coefs[j, 1:], float(coefs[j, 0])))
    return out


def _check_flattenable(model: Model, allow_head: bool) -> None:
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Activation):
            raise FlattenError(
                f"layer {i} applies {layer.name}, which is not a polynomial; only dense, batchnorm and slaf layers flatten"
            )
        if isinstance(layer, Head) and not allow_head:
            raise UnsupportedHeadError(
                f"layer {i} is a {layer.nonlinearity} head; flatten the part before it with flatten_penultimate"
            )
        if isinstance(layer, (SlafLayer, BatchNorm)) and getattr(layer, "normalize", True) and not layer.stats_initialized:
            raise FlattenError(f"layer {i} ({layer.kind}) has no frozen statistics; run a training-phase pass first")


def symbolic_forward(model: Model, cap: int | None = None) -> list[Polynomial]:
    """Output polynomials of every logit (head nonlinearity excluded)."""
    n = model.spec.input_width
    basis_cardinality(n, model.degree(), cap)
    polys = [Polynomial.variable(n, i) for i in range(n)]
    for layer in model.layers:
        if isinstance(layer, Dense):
            polys = _dense(polys, layer.W.data, layer.b.data[0])
        elif isinstance(layer, Head):
            polys = _dense(polys, layer.dense.W.data, layer.dense.b.data[0])
        elif isinstance(layer, BatchNorm):
            scale, shift = layer.affine()
            polys = [poly_sum([p], [s], float(t)) for p, s, t in zip(polys, scale, shift)]
        elif isinstance(layer, SlafLayer):
            polys = _slaf(polys, layer, cap)
        else:
            raise FlattenError(f"cannot flatten layer {layer!r}")
    return polys


def _flatten(model: Model, allow_head: bool, cap: int | None) -> FlattenedModel:
    _check_flattenable(model, allow_head)
    polys = symbolic_forward(model, cap)
    n, k = model.spec.input_width, model.degree()
    basis = enumerate_basis(n, k, cap)
    head = model.head.nonlinearity if model.head is not None else None
    return FlattenedModel(n, k, basis, _dense_matrix(polys, basis), model.fingerprint(), head, polys)


def flatten(model: Model, cap: int | None = None) -> FlattenedModel:
    """Flatten a regression-style model (no sigmoid/softmax head)."""
    return _flatten(model, allow_head=False, cap=cap)


def flatten_penultimate(model: Model, cap: int | None = None) -> FlattenedModel:
    """Flatten everything up to the head nonlinearity.

    The head's dense map is folded into ``W``; ``result.head`` names the
    remaining sigmoid or softmax so ``predict`` reproduces the classifier.
    Models without a head flatten exactly as :func:`flatten`.
    """
    return _flatten(model, allow_head=True, cap=cap)


def parameter_bound(model: Model, cap: int | None = None) -> tuple[int, int]:
    """``(trainable parameter count, outputs * C(k + n, n))``."""
    _check_flattenable(model, allow_head=True)
    n = model.spec.input_width
    return model.parameter_count(), model.output_width * basis_cardinality(n, model.degree(), cap)


def equivalence_check(
    model: Model,
    flat: FlattenedModel,
    npoints: int = 1000,
    box: tuple[float, float] = (-1.0, 1.0),
    seed: int = 0,
    points: np.ndarray | None = None,
) -> float:
    """Max of ``|net(x) - poly(x)| / (1 + |net(x)|)`` over sampled points.

    Logits are compared, so for classifiers the check covers the flattened
    part and the head nonlinearity is shared by construction.
    """
    n = model.spec.input_width
    if flat.nvars != n:
        raise ValueError(f"flattened model has {flat.nvars} variables, network has {n} inputs")
    if points is None:
        lo, hi = box
        points = np.random.default_rng(seed).uniform(lo, hi, size=(npoints, n))
    with tc.no_grad():
        net = model.logits(points, "eval").data
    poly = flat.linear(points)
    return float(np.max(np.abs(net - poly) / (1.0 + np.abs(net))))
