"""Declarative feed-forward models: dense, batchnorm, activations, SLAF, heads.

A :class:`ModelSpec` describes the architecture; :func:`build` turns it into
a :class:`Model` with initialized parameters. Models serialize to a JSON
document that round-trips bitwise.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import tensorcore as tc
from .slaf import SlafLayer, UninitializedStatsError, slaf_degree_of_network, slaf_l2_penalty
from .tensorcore import Tensor

__all__ = [
    "LayerSpec",
    "ModelSpec",
    "Model",
    "Dense",
    "BatchNorm",
    "Activation",
    "Head",
    "SpecError",
    "DivergenceError",
    "ModelFileError",
    "build",
    "serialize",
    "deserialize",
    "model_to_dict",
    "model_from_dict",
]

FORMAT_VERSION = 1
LAYER_KINDS = ("dense", "batchnorm", "activation", "slaf", "sigmoid_head", "softmax_head")
ACTIVATIONS = ("relu", "tanh", "sigmoid")
LOSSES = ("mse", "binary_cross_entropy", "categorical_cross_entropy")


class SpecError(ValueError):
    """Invalid model specification."""


class DivergenceError(FloatingPointError):
    """Loss became NaN or Inf."""


class ModelFileError(ValueError):
    """Malformed model file."""


@dataclass
class LayerSpec:
    kind: str
    units: int | None = None
    activation: str | None = None
    degree: int | None = None
    mode: str = "shared"
    normalize: bool = True
    classes: int | None = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "dense":
            out["units"] = self.units
        elif self.kind == "activation":
            out["activation"] = self.activation
        elif self.kind == "slaf":
            out.update(degree=self.degree, mode=self.mode, normalize=self.normalize)
        elif self.kind == "softmax_head":
            out["classes"] = self.classes
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - allowed
        if unknown:
            raise SpecError(f"unknown layer fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelSpec:
    input_width: int
    layers: list[LayerSpec] = field(default_factory=list)
    loss: str = "mse"
    regularizers: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "input_width": self.input_width,
            "layers": [layer.to_dict() for layer in self.layers],
            "loss": self.loss,
            "regularizers": dict(self.regularizers),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        layers = [lay if isinstance(lay, LayerSpec) else LayerSpec.from_dict(lay) for lay in d.get("layers", [])]
        return cls(
            input_width=int(d["input_width"]),
            layers=layers,
            loss=d.get("loss", "mse"),
            regularizers=dict(d.get("regularizers", {})),
        )

    def validate(self) -> None:
        if self.input_width < 1:
            raise SpecError("input_width must be positive")
        if self.loss not in LOSSES:
            raise SpecError(f"unknown loss {self.loss!r}")
        for name in self.regularizers:
            if name not in ("l2_weights", "l2_slaf_coeffs", "l1_first_layer"):
                raise SpecError(f"unknown regularizer {name!r}")
            if self.regularizers[name] < 0:
                raise SpecError(f"regularizer {name} must be non-negative")
        for i, layer in enumerate(self.layers):
            if layer.kind not in LAYER_KINDS:
                raise SpecError(f"layer {i}: unknown kind {layer.kind!r}")
            if layer.kind.endswith("_head") and i != len(self.layers) - 1:
                raise SpecError(f"layer {i}: a {layer.kind} may only be the final layer")
            if layer.kind == "dense" and (layer.units is None or layer.units < 1):
                raise SpecError(f"layer {i}: dense layer needs units >= 1")
            if layer.kind == "activation" and layer.activation not in ACTIVATIONS:
                raise SpecError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.kind == "slaf" and (layer.degree is None or layer.degree < 1):
                raise SpecError(f"layer {i}: SLAF layer needs degree >= 1")
            if layer.kind == "softmax_head" and (layer.classes is None or layer.classes < 2):
                raise SpecError(f"layer {i}: softmax head needs classes >= 2")
        head = self.layers[-1].kind if self.layers else None
        if self.loss == "binary_cross_entropy" and head != "sigmoid_head":
            raise SpecError("binary_cross_entropy needs a sigmoid_head as the final layer")
        if self.loss == "categorical_cross_entropy" and head != "softmax_head":
            raise SpecError("categorical_cross_entropy needs a softmax_head as the final layer")
        if self.loss == "mse" and head in ("sigmoid_head", "softmax_head"):
            raise SpecError("mse expects a linear output, not a classification head")


# -- layers ---------------------------------------------------------------


class Dense:
    kind = "dense"

    def __init__(self, W: np.ndarray, b: np.ndarray):
        self.W = tc.parameter(W, name="dense.W")
        self.b = tc.parameter(np.asarray(b, dtype=np.float64).reshape(1, -1), name="dense.b")

    @classmethod
    def glorot(cls, fan_in: int, fan_out: int, rng: np.random.Generator) -> "Dense":
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return cls(rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out))

    @property
    def in_units(self) -> int:
        return self.W.rows

    @property
    def units(self) -> int:
        return self.W.cols

    def forward(self, x: Tensor, train: bool = False, update_stats: bool = True) -> Tensor:
        return tc.add(tc.matmul(x, self.W), self.b)

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]

    def state_dict(self) -> dict:
        return {"W": self.W.data.tolist(), "b": self.b.data[0].tolist()}

    @classmethod
    def from_state(cls, state: dict, fan_in: int, fan_out: int) -> "Dense":
        W = np.asarray(state["W"], dtype=np.float64)
        b = np.asarray(state["b"], dtype=np.float64)
        if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ValueError(f"dense weights {W.shape}/{b.shape}, expected {(fan_in, fan_out)}/{(fan_out,)}")
        return cls(W, b)


class BatchNorm:
    kind = "batchnorm"

    def __init__(self, units: int, momentum: float = 0.99, eps: float = 1e-5):
        self.units = units
        self.momentum = momentum
        self.eps = eps
        self.gamma = tc.parameter(np.ones((1, units)), name="bn.gamma")
        self.beta = tc.parameter(np.zeros((1, units)), name="bn.beta")
        self.running_mean = np.zeros(units)
        self.running_var = np.ones(units)
        self.stats_initialized = False

    def forward(self, x: Tensor, train: bool = False, update_stats: bool = True) -> Tensor:
        if train:
            mean, var = tc.batch_stats(x)
            if update_stats:
                if self.stats_initialized:
                    m = self.momentum
                    self.running_mean = m * self.running_mean + (1 - m) * mean.data[0]
                    self.running_var = m * self.running_var + (1 - m) * var.data[0]
                else:
                    self.running_mean = mean.data[0].copy()
                    self.running_var = var.data[0].copy()
                    self.stats_initialized = True
            xhat = tc.div(tc.sub(x, mean), tc.sqrt(tc.add(var, self.eps)))
        else:
            if not self.stats_initialized:
                raise UninitializedStatsError("batchnorm layer has no running statistics yet")
            xhat = tc.mul(tc.sub(x, tc.tensor(self.running_mean)), tc.tensor(1.0 / np.sqrt(self.running_var + self.eps)))
        return tc.add(tc.mul(xhat, self.gamma), self.beta)

    def affine(self) -> tuple[np.ndarray, np.ndarray]:
        """Evaluation-phase map as ``scale * x + shift`` per unit."""
        scale = self.gamma.data[0] / np.sqrt(self.running_var + self.eps)
        return scale, self.beta.data[0] - scale * self.running_mean

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def state_dict(self) -> dict:
        return {
            "gamma": self.gamma.data[0].tolist(),
            "beta": self.beta.data[0].tolist(),
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
            "stats_initialized": self.stats_initialized,
            "momentum": self.momentum,
            "eps": self.eps,
        }

    @classmethod
    def from_state(cls, state: dict, units: int) -> "BatchNorm":
        layer = cls(units, momentum=state["momentum"], eps=state["eps"])
        for name in ("gamma", "beta", "running_mean", "running_var"):
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != (units,):
                raise ValueError(f"batchnorm {name} has shape {arr.shape}, expected {(units,)}")
            if name in ("gamma", "beta"):
                getattr(layer, name).data[...] = arr.reshape(1, -1)
            else:
                setattr(layer, name, arr)
        layer.stats_initialized = bool(state["stats_initialized"])
        return layer


_ACT_FN = {"relu": tc.relu, "tanh": tc.tanh, "sigmoid": tc.sigmoid}


class Activation:
    kind = "activation"

    def __init__(self, name: str):
        if name not in _ACT_FN:
            raise SpecError(f"unknown activation {name!r}")
        self.name = name

    def forward(self, x: Tensor, train: bool = False, update_stats: bool = True) -> Tensor:
        return _ACT_FN[self.name](x)

    def parameters(self) -> list[Tensor]:
        return []

    def state_dict(self) -> dict:
        return {}


class Head:
    """Final dense layer whose output feeds a sigmoid or softmax."""

    def __init__(self, kind: str, dense: Dense):
        self.kind = kind
        self.dense = dense

    @property
    def units(self) -> int:
        return self.dense.units

    @property
    def nonlinearity(self) -> str:
        return "sigmoid" if self.kind == "sigmoid_head" else "softmax"

    def forward(self, x: Tensor, train: bool = False, update_stats: bool = True) -> Tensor:
        return self.dense.forward(x)

    def parameters(self) -> list[Tensor]:
        return self.dense.parameters()

    def state_dict(self) -> dict:
        return self.dense.state_dict()


# -- model ----------------------------------------------------------------


class Model:
    """A built network. ``forward`` returns predictions, ``loss`` a scalar tensor."""

    def __init__(self, spec: ModelSpec, layers: list, seed: int | None = None):
        self.spec = spec
        self.layers = layers
        self.seed = seed

    @property
    def head(self) -> Head | None:
        if self.layers and isinstance(self.layers[-1], Head):
            return self.layers[-1]
        return None

    @property
    def output_width(self) -> int:
        width = self.spec.input_width
        for layer in self.layers:
            if isinstance(layer, (Dense, Head)):
                width = layer.units
        return width

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def slaf_layers(self) -> list[SlafLayer]:
        return [layer for layer in self.layers if isinstance(layer, SlafLayer)]

    def degree(self) -> int:
        """Product of SLAF degrees (1 when there are none)."""
        return slaf_degree_of_network([layer.degree for layer in self.slaf_layers()])

    def _check_input(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else tc.tensor(x)
        if x.cols != self.spec.input_width:
            raise tc.ShapeError(f"model expects {self.spec.input_width} input columns, got {x.cols}")
        return x

    def logits(self, x, phase: str = "eval", update_stats: bool = True) -> Tensor:
        """Output before any head nonlinearity."""
        if phase not in ("train", "eval"):
            raise ValueError(f"phase must be 'train' or 'eval', got {phase!r}")
        h = self._check_input(x)
        train = phase == "train"
        for layer in self.layers:
            h = layer.forward(h, train, update_stats)
        return h

    def forward(self, x, phase: str = "eval", update_stats: bool = True) -> Tensor:
        z = self.logits(x, phase, update_stats)
        head = self.head
        if head is None:
            return z
        return tc.sigmoid(z) if head.nonlinearity == "sigmoid" else tc.softmax(z)

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        with tc.no_grad():
            return self.forward(x, "eval").data

    def data_loss(self, x, y, phase: str = "train", update_stats: bool = True) -> Tensor:
        y = y if isinstance(y, Tensor) else tc.tensor(y)
        z = self.logits(x, phase, update_stats)
        if self.spec.loss == "mse":
            if z.shape != y.shape:
                raise tc.ShapeError(f"mse: predictions {z.shape} vs targets {y.shape}")
            return tc.mse(z, y)
        if self.spec.loss == "binary_cross_entropy":
            return tc.bce_with_logits(z, y)
        if y.cols == 1 and z.cols > 1:
            y = tc.tensor(np.eye(z.cols)[y.data[:, 0].astype(int)])
        return tc.softmax_cross_entropy(z, y)

    def regularization(self) -> Tensor | None:
        reg = self.spec.regularizers
        terms = []
        lam = reg.get("l2_weights", 0.0)
        if lam:
            for layer in self.layers:
                dense = layer.dense if isinstance(layer, Head) else layer
                if isinstance(dense, Dense):
                    terms.append(tc.mul(tc.total(tc.mul(dense.W, dense.W)), lam))
        lam = reg.get("l2_slaf_coeffs", 0.0)
        if lam:
            for layer in self.slaf_layers():
                terms.append(tc.mul(slaf_l2_penalty(layer), lam))
        lam = reg.get("l1_first_layer", 0.0)
        if lam:
            first = next((lay for lay in self.layers if isinstance(lay, (Dense, Head))), None)
            if first is not None:
                dense = first.dense if isinstance(first, Head) else first
                terms.append(tc.mul(tc.total(tc.absolute(dense.W)), lam))
        if not terms:
            return None
        out = terms[0]
        for t in terms[1:]:
            out = tc.add(out, t)
        return out

    def loss(self, x, y, phase: str = "train", update_stats: bool = True) -> Tensor:
        """Data term plus every configured regularizer."""
        out = self.data_loss(x, y, phase, update_stats)
        reg = self.regularization()
        if reg is not None:
            out = tc.add(out, reg)
        if not math.isfinite(out.item()):
            raise DivergenceError("loss is not finite")
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(model_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def __repr__(self) -> str:
        kinds = ", ".join(getattr(layer, "kind", type(layer).__name__) for layer in self.layers)
        return f"Model(input_width={self.spec.input_width}, layers=[{kinds}])"


def build(spec: ModelSpec | dict, seed: int = 0, slaf_init_noise: float = 0.01) -> Model:
    """Instantiate a model; identical specs and seeds give identical parameters."""
    if isinstance(spec, dict):
        spec = ModelSpec.from_dict(spec)
    spec.validate()
    rng = np.random.default_rng(seed)
    width = spec.input_width
    layers: list = []
    for ls in spec.layers:
        if ls.kind == "dense":
            layers.append(Dense.glorot(width, ls.units, rng))
            width = ls.units
        elif ls.kind == "batchnorm":
            layers.append(BatchNorm(width))
        elif ls.kind == "activation":
            layers.append(Activation(ls.activation))
        elif ls.kind == "slaf":
            layers.append(SlafLayer(ls.degree, width, ls.mode, normalize=ls.normalize, init_noise=slaf_init_noise, rng=rng))
        elif ls.kind == "sigmoid_head":
            layers.append(Head(ls.kind, Dense.glorot(width, 1, rng)))
            width = 1
        elif ls.kind == "softmax_head":
            layers.append(Head(ls.kind, Dense.glorot(width, ls.classes, rng)))
            width = ls.classes
    return Model(spec, layers, seed)


# -- serialization ----------------------------------------------------------


def model_to_dict(model: Model) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "seed": model.seed,
        "layers": [{"kind": layer.kind, "state": layer.state_dict()} for layer in model.layers],
    }


def model_from_dict(doc: dict) -> Model:
    try:
        version = doc["format_version"]
    except (KeyError, TypeError) as exc:
        raise ModelFileError("model file lacks format_version") from exc
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format version {version}")
    try:
        spec = ModelSpec.from_dict(doc["spec"])
        spec.validate()
    except (KeyError, TypeError, SpecError) as exc:
        raise ModelFileError(f"invalid spec: {exc}") from exc
    entries = doc.get("layers")
    if not isinstance(entries, list) or len(entries) != len(spec.layers):
        raise ModelFileError("layer list does not match the model spec")
    width = spec.input_width
    layers: list = []
    for i, (ls, entry) in enumerate(zip(spec.layers, entries)):
        where = f"layers[{i}] ({ls.kind})"
        try:
            if entry.get("kind") != ls.kind:
                raise ValueError(f"kind {entry.get('kind')!r} does not match spec")
            state = entry["state"]
            if ls.kind == "dense":
                layers.append(Dense.from_state(state, width, ls.units))
                width = ls.units
            elif ls.kind == "batchnorm":
                layers.append(BatchNorm.from_state(state, width))
            elif ls.kind == "activation":
                layers.append(Activation(ls.activation))
            elif ls.kind == "slaf":
                layer = SlafLayer.from_state(state)
                if layer.units != width or layer.degree != ls.degree or layer.mode != ls.mode:
                    raise ValueError("SLAF state disagrees with the model spec")
                layers.append(layer)
            else:
                out = 1 if ls.kind == "sigmoid_head" else ls.classes
                layers.append(Head(ls.kind, Dense.from_state(state, width, out)))
                width = out
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFileError(f"{where}: {exc}") from exc
    return Model(spec, layers, doc.get("seed"))


def serialize(model: Model, path: str | Path | None = None) -> str:
    """JSON text of the model; written to ``path`` when given."""
    text = json.dumps(model_to_dict(model), indent=1)
    if path is not None:
        Path(path).write_text(text)
    return text


def deserialize(source: str | Path) -> Model:
    """Load a model from a path or from JSON text."""
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        name = str(source)
        text = Path(source).read_text()
    else:
        name = "<string>"
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{name}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return model_from_dict(doc)


def spec_to_json(spec: ModelSpec) -> str:
    return json.dumps(spec.to_dict(), indent=1)
