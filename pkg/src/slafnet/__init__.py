"""Neural networks with learnable polynomial activations.

Train SLAF networks, flatten them into a single linear map over polynomial
features, and audit polynomial stand-ins for fixed activations.
"""
from .kernels import BACKEND
from .network import ModelSpec, build, deserialize, serialize
from .polybasis import CapacityError, MultiIndex, Polynomial, basis_cardinality, enumerate_basis
from .slaf import SlafLayer

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CapacityError",
    "ModelSpec",
    "MultiIndex",
    "Polynomial",
    "SlafLayer",
    "basis_cardinality",
    "build",
    "deserialize",
    "enumerate_basis",
    "serialize",
    "__version__",
]
