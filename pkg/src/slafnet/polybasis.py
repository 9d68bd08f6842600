"""Multi-indices, polynomial bases and sparse multivariate polynomials.

Monomials are ordered graded-lexicographically: lower total degree first,
then larger leading exponents first, so over two variables the degree-2
basis reads ``1, x1, x2, x1^2, x1*x2, x2^2``.

A :class:`Polynomial` keeps its terms as an exponent matrix plus a
coefficient vector in that canonical order, with no zero coefficients.
Products go through :mod:`slafnet.kernels`, which packs an exponent row into
a single int64 key whenever the digits fit.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import kernels

__all__ = [
    "CapacityError",
    "MultiIndex",
    "Polynomial",
    "capacity_cap",
    "basis_cardinality",
    "enumerate_basis",
    "enumerate_monomials",
    "poly_add",
    "poly_scale",
    "poly_mul",
    "poly_pow",
    "poly_eval",
    "poly_eval_batch",
    "monomial_product_closure_check",
    "expand_features",
    "format_polynomial",
    "parse_polynomial",
]

DEFAULT_CAP = 5_000_000
PRUNE_TOL = 1e-12
CAP_ENV = "SLAFNET_CAPACITY_CAP"


class CapacityError(RuntimeError):
    """A basis or polynomial would exceed the configured size cap."""


def capacity_cap(cap: int | None = None) -> int:
    """Resolve a cap: explicit value, else ``$SLAFNET_CAPACITY_CAP``, else 5,000,000."""
    if cap is not None:
        return int(cap)
    env = os.environ.get(CAP_ENV)
    return int(env) if env else DEFAULT_CAP


@dataclass(frozen=True)
class MultiIndex:
    """Exponent vector of a monomial; comparisons follow graded-lex order."""

    exponents: tuple[int, ...]
    degree: int = field(init=False, compare=False)

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ValueError(f"exponents must be non-negative, got {exps}")
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "degree", sum(exps))

    @property
    def nvars(self) -> int:
        return len(self.exponents)

    def sort_key(self) -> tuple:
        return (self.degree, tuple(-e for e in self.exponents))

    def __lt__(self, other: "MultiIndex") -> bool:
        return self.sort_key() < other.sort_key()

    def __le__(self, other: "MultiIndex") -> bool:
        return self.sort_key() <= other.sort_key()

    def __gt__(self, other: "MultiIndex") -> bool:
        return self.sort_key() > other.sort_key()

    def __ge__(self, other: "MultiIndex") -> bool:
        return self.sort_key() >= other.sort_key()

    def __mul__(self, other: "MultiIndex") -> "MultiIndex":
        if self.nvars != other.nvars:
            raise ValueError("monomials over different variable counts")
        return MultiIndex(tuple(a + b for a, b in zip(self.exponents, other.exponents)))

    def __iter__(self):
        return iter(self.exponents)

    def __repr__(self) -> str:
        return f"MultiIndex{self.exponents}"


def basis_cardinality(n: int, k: int, cap: int | None = None) -> int:
    """Number of monomials of total degree <= k in n variables, C(k+n, n).

    Raises CapacityError when the count exceeds ``cap`` (see :func:`capacity_cap`).
    """
    if n < 1 or k < 0:
        raise ValueError(f"need n >= 1 and k >= 0, got n={n}, k={k}")
    count = math.comb(k + n, n)
    limit = capacity_cap(cap)
    if count > limit:
        raise CapacityError(f"basis of degree {k} over {n} variables has {count} elements, cap is {limit}")
    return count


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    # descending-lex compositions of `total` into `parts` non-negative parts
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first, *rest)


def enumerate_monomials(n: int, degree: int) -> list[MultiIndex]:
    """Monomials of total degree exactly ``degree``, in graded-lex order."""
    if n < 1 or degree < 0:
        raise ValueError(f"need n >= 1 and degree >= 0, got n={n}, degree={degree}")
    return [MultiIndex(c) for c in _compositions(degree, n)]


def enumerate_basis(n: int, k: int, cap: int | None = None) -> list[MultiIndex]:
    """All monomials of total degree <= k over n variables, graded-lex order."""
    basis_cardinality(n, k, cap)
    out: list[MultiIndex] = []
    for d in range(k + 1):
        out.extend(MultiIndex(c) for c in _compositions(d, n))
    return out


def _graded_lex_order(exps: np.ndarray) -> np.ndarray:
    if exps.shape[0] <= 1:
        return np.arange(exps.shape[0])
    deg = exps.sum(axis=1)
    # np.lexsort sorts by the last key first
    keys = [-exps[:, j] for j in range(exps.shape[1] - 1, -1, -1)]
    keys.append(deg)
    return np.lexsort(keys)


def _pack_base(max_exps: np.ndarray) -> int | None:
    base = int(max_exps.max(initial=0)) + 1
    if max_exps.size * math.log2(max(base, 2)) >= 62:
        return None
    return base


def _pack(exps: np.ndarray, base: int) -> np.ndarray:
    n = exps.shape[1]
    weights = base ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return exps.astype(np.int64) @ weights


def _unpack(keys: np.ndarray, base: int, n: int) -> np.ndarray:
    out = np.empty((keys.size, n), dtype=np.int64)
    rem = keys.copy()
    for j in range(n - 1, -1, -1):
        out[:, j] = rem % base
        rem //= base
    return out


class Polynomial:
    """Sparse polynomial over ``nvars`` variables with float64 coefficients.

    Immutable after construction. Build from a mapping of exponent tuples
    (or :class:`MultiIndex`) to coefficients, or with the helper
    constructors :meth:`constant` and :meth:`variable`.
    """

    __slots__ = ("nvars", "_exps", "_coefs")

    def __init__(self, nvars: int, terms: Mapping | None = None):
        if nvars < 1:
            raise ValueError("a polynomial needs at least one variable")
        self.nvars = int(nvars)
        if not terms:
            self._exps = np.zeros((0, self.nvars), dtype=np.int64)
            self._coefs = np.zeros(0)
            return
        rows = []
        coefs = []
        for key, c in terms.items():
            exps = tuple(key.exponents) if isinstance(key, MultiIndex) else tuple(key)
            if len(exps) != self.nvars:
                raise ValueError(f"term {exps} does not have {self.nvars} exponents")
            if any(int(e) != e or e < 0 for e in exps):
                raise ValueError(f"exponents must be non-negative integers, got {exps}")
            rows.append(exps)
            coefs.append(float(c))
        exps_arr = np.array(rows, dtype=np.int64).reshape(len(rows), self.nvars)
        e, c = _canonical(exps_arr, np.array(coefs))
        self._exps, self._coefs = e, c

    @classmethod
    def _from_arrays(cls, nvars: int, exps: np.ndarray, coefs: np.ndarray, canonical: bool = False) -> "Polynomial":
        p = cls.__new__(cls)
        p.nvars = nvars
        if canonical:
            p._exps, p._coefs = exps, coefs
        else:
            p._exps, p._coefs = _canonical(exps.reshape(-1, nvars), coefs)
        return p

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, index: int, coef: float = 1.0) -> "Polynomial":
        exps = [0] * nvars
        exps[index] = 1
        return cls(nvars, {tuple(exps): coef})

    @property
    def exponents(self) -> np.ndarray:
        return self._exps

    @property
    def coefficients(self) -> np.ndarray:
        return self._coefs

    @property
    def terms(self) -> dict[MultiIndex, float]:
        return {MultiIndex(tuple(e)): float(c) for e, c in zip(self._exps.tolist(), self._coefs)}

    def __len__(self) -> int:
        return self._coefs.size

    @property
    def degree(self) -> int:
        if self._coefs.size == 0:
            return 0
        return int(self._exps.sum(axis=1).max())

    def is_zero(self) -> bool:
        return self._coefs.size == 0

    def coefficient(self, exps: Sequence[int] | MultiIndex) -> float:
        target = np.asarray(tuple(exps), dtype=np.int64)
        hit = np.nonzero((self._exps == target).all(axis=1))[0]
        return float(self._coefs[hit[0]]) if hit.size else 0.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return (
            self.nvars == other.nvars
            and self._exps.shape == other._exps.shape
            and bool(np.array_equal(self._exps, other._exps))
            and bool(np.array_equal(self._coefs, other._coefs))
        )

    def allclose(self, other: "Polynomial", rtol: float = 1e-9, atol: float = 1e-12) -> bool:
        diff = poly_add(self, poly_scale(other, -1.0))
        scale = max(1.0, float(np.abs(self._coefs).max(initial=0.0)), float(np.abs(other._coefs).max(initial=0.0)))
        return bool(np.all(np.abs(diff._coefs) <= atol + rtol * scale))

    __hash__ = None  # type: ignore[assignment]

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        return poly_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        return poly_add(self, poly_scale(other, -1.0))

    def __neg__(self):
        return poly_scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return poly_scale(self, other)
        return poly_mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __pow__(self, i: int):
        return poly_pow(self, i)

    def __call__(self, x):
        return poly_eval(self, x)

    def __repr__(self) -> str:
        if self.is_zero():
            return f"Polynomial(nvars={self.nvars}, 0)"
        parts = []
        for e, c in zip(self._exps.tolist()[:6], self._coefs[:6]):
            mono = "*".join(f"x{i + 1}^{a}" if a > 1 else f"x{i + 1}" for i, a in enumerate(e) if a)
            parts.append(f"{c:.6g}" + (f"*{mono}" if mono else ""))
        more = " + ..." if len(self) > 6 else ""
        return f"Polynomial(nvars={self.nvars}, {' + '.join(parts)}{more})"


def _canonical(exps: np.ndarray, coefs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge duplicate exponent rows, prune tiny coefficients, sort graded-lex."""
    n = exps.shape[1]
    if coefs.size == 0:
        return np.zeros((0, n), dtype=np.int64), np.zeros(0)
    base = _pack_base(exps.max(axis=0))
    if base is not None:
        keys, summed = kernels.combine_packed(np.ascontiguousarray(_pack(exps, base)), np.ascontiguousarray(coefs, dtype=np.float64))
        uniq = _unpack(keys, base, n)
    else:
        uniq, inv = np.unique(exps, axis=0, return_inverse=True)
        summed = np.bincount(inv.ravel(), weights=coefs, minlength=uniq.shape[0])
    keep = np.abs(summed) >= PRUNE_TOL
    uniq, summed = uniq[keep], summed[keep]
    order = _graded_lex_order(uniq)
    return np.ascontiguousarray(uniq[order]), np.ascontiguousarray(summed[order])


def _check_pair(a: Polynomial, b: Polynomial) -> None:
    if a.nvars != b.nvars:
        raise ValueError(f"polynomials over {a.nvars} and {b.nvars} variables cannot be combined")


def _check_terms(count: int, cap: int | None) -> None:
    limit = capacity_cap(cap)
    if count > limit:
        raise CapacityError(f"polynomial would have {count} terms, cap is {limit}")


def poly_add(a: Polynomial, b: Polynomial, cap: int | None = None) -> Polynomial:
    _check_pair(a, b)
    out = Polynomial._from_arrays(a.nvars, np.vstack([a._exps, b._exps]), np.concatenate([a._coefs, b._coefs]))
    _check_terms(len(out), cap)
    return out


def poly_scale(a: Polynomial, s: float) -> Polynomial:
    s = float(s)
    if s == 0.0:
        return Polynomial(a.nvars)
    coefs = a._coefs * s
    keep = np.abs(coefs) >= PRUNE_TOL
    return Polynomial._from_arrays(a.nvars, a._exps[keep], coefs[keep], canonical=True)


def poly_sum(polys: Sequence[Polynomial], weights: Sequence[float] | None = None, constant: float = 0.0) -> Polynomial:
    """``constant + sum_i weights[i] * polys[i]`` in one canonicalization pass."""
    if not polys:
        raise ValueError("poly_sum needs at least one polynomial")
    n = polys[0].nvars
    for p in polys:
        if p.nvars != n:
            raise ValueError("poly_sum: mixed variable counts")
    w = np.ones(len(polys)) if weights is None else np.asarray(weights, dtype=np.float64)
    exps = [p._exps for p in polys] + [np.zeros((1, n), dtype=np.int64)]
    coefs = [p._coefs * wi for p, wi in zip(polys, w)] + [np.array([float(constant)])]
    return Polynomial._from_arrays(n, np.vstack(exps), np.concatenate(coefs))


def poly_mul(a: Polynomial | float, b: Polynomial | float, cap: int | None = None) -> Polynomial:
    """Product of two polynomials (or a polynomial and a scalar)."""
    if not isinstance(a, Polynomial):
        return poly_scale(b, a)  # type: ignore[arg-type]
    if not isinstance(b, Polynomial):
        return poly_scale(a, b)
    _check_pair(a, b)
    n = a.nvars
    if a.is_zero() or b.is_zero():
        return Polynomial(n)
    limit = capacity_cap(cap)
    # the product cannot have more terms than basis elements up to its degree
    bound = min(len(a) * len(b), math.comb(a.degree + b.degree + n, n))
    if bound > limit:
        raise CapacityError(f"product may have up to {bound} terms, cap is {limit}")
    base = _pack_base(a._exps.max(axis=0) + b._exps.max(axis=0))
    if base is not None:
        keys, coefs = kernels.mul_packed(
            np.ascontiguousarray(_pack(a._exps, base)), a._coefs, np.ascontiguousarray(_pack(b._exps, base)), b._coefs
        )
        keep = np.abs(coefs) >= PRUNE_TOL
        exps = _unpack(keys[keep], base, n)
        coefs = coefs[keep]
        order = _graded_lex_order(exps)
        return Polynomial._from_arrays(n, np.ascontiguousarray(exps[order]), np.ascontiguousarray(coefs[order]), canonical=True)
    exps = (a._exps[:, None, :] + b._exps[None, :, :]).reshape(-1, n)
    coefs = np.outer(a._coefs, b._coefs).ravel()
    return Polynomial._from_arrays(n, exps, coefs)


def poly_pow(p: Polynomial, i: int, cap: int | None = None) -> Polynomial:
    """``p ** i`` by binary exponentiation; ``p ** 0`` is the constant 1."""
    if int(i) != i or i < 0:
        raise ValueError(f"poly_pow: exponent must be a non-negative integer, got {i!r}")
    i = int(i)
    result = Polynomial.constant(p.nvars, 1.0)
    base = p
    while i:
        if i & 1:
            result = poly_mul(result, base, cap)
        i >>= 1
        if i:
            base = poly_mul(base, base, cap)
    return result


def _power_table(X: np.ndarray, max_exp: np.ndarray) -> list[np.ndarray]:
    # tables[j][:, e] = X[:, j] ** e by repeated multiplication
    tables = []
    for j in range(X.shape[1]):
        t = np.empty((X.shape[0], int(max_exp[j]) + 1))
        t[:, 0] = 1.0
        for e in range(1, t.shape[1]):
            t[:, e] = t[:, e - 1] * X[:, j]
        tables.append(t)
    return tables


def poly_eval_batch(p: Polynomial, X) -> np.ndarray:
    """Evaluate ``p`` at every row of ``X`` (m x nvars). Returns shape (m,)."""
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != p.nvars:
        raise ValueError(f"points have {X.shape[1]} coordinates, polynomial has {p.nvars} variables")
    m = X.shape[0]
    if p.is_zero():
        return np.zeros(m)
    used = np.nonzero(p._exps.any(axis=0))[0]
    tables = _power_table(X[:, used], p._exps[:, used].max(axis=0))
    out = np.zeros(m)
    # chunk over terms to bound memory
    step = max(1, 4_000_000 // max(m, 1))
    for s in range(0, len(p), step):
        e = p._exps[s:s + step]
        mono = np.ones((m, e.shape[0]))
        for t_idx, j in enumerate(used):
            mono *= tables[t_idx][:, e[:, j]]
        out += mono @ p._coefs[s:s + step]
    return out


def poly_eval(p: Polynomial, x) -> float:
    """Evaluate ``p`` at a single point."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != p.nvars:
        raise ValueError(f"point has {x.size} coordinates, polynomial has {p.nvars} variables")
    return float(poly_eval_batch(p, x.reshape(1, -1))[0])


def monomial_product_closure_check(n: int, k1: int, k2: int, cap: int | None = None) -> bool:
    """Check M_k1 x M_k2 == M_{k1+k2} and B_k1 x B_k2 == B_{k1+k2} by enumeration."""
    m1 = enumerate_monomials(n, k1)
    m2 = enumerate_monomials(n, k2)
    limit = capacity_cap(cap)
    if len(m1) * len(m2) > limit:
        raise CapacityError(f"{len(m1) * len(m2)} products exceed cap {limit}")
    mono_ok = {a * b for a in m1 for b in m2} == set(enumerate_monomials(n, k1 + k2))
    b1 = enumerate_basis(n, k1, cap)
    b2 = enumerate_basis(n, k2, cap)
    if len(b1) * len(b2) > limit:
        raise CapacityError(f"{len(b1) * len(b2)} products exceed cap {limit}")
    basis_ok = {a * b for a in b1 for b in b2} == set(enumerate_basis(n, k1 + k2, cap))
    return mono_ok and basis_ok


def expand_features(X, basis: Sequence[MultiIndex]) -> np.ndarray:
    """Design matrix whose column c is the monomial ``basis[c]`` evaluated on X.

    Each monomial is its graded-lex parent times one variable, so a column
    costs one multiplication when the basis is closed under that step (true
    for every output of :func:`enumerate_basis`).
    """
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    m, n = X.shape
    index = {b.exponents: c for c, b in enumerate(basis)}
    out = np.empty((m, len(basis)))
    for c, b in enumerate(basis):
        if b.nvars != n:
            raise ValueError(f"basis element {b} does not match {n} input columns")
        exps = b.exponents
        if b.degree == 0:
            out[:, c] = 1.0
            continue
        j = next(i for i, e in enumerate(exps) if e)
        parent = exps[:j] + (exps[j] - 1,) + exps[j + 1:]
        pc = index.get(parent)
        if pc is not None and pc < c:
            out[:, c] = out[:, pc] * X[:, j]
        else:
            col = np.ones(m)
            for var, e in enumerate(exps):
                for _ in range(e):
                    col = col * X[:, var]
            out[:, c] = col
    return out


def format_polynomial(p: Polynomial, header: bool = True) -> str:
    """One term per line, ``coeff exp_1 ... exp_n``, graded-lex order."""
    lines = [f"# polynomial nvars={p.nvars} terms={len(p)} degree={p.degree}"] if header else []
    for e, c in zip(p._exps.tolist(), p._coefs):
        lines.append(" ".join([repr(float(c)), *map(str, e)]))
    return "\n".join(lines) + "\n"


def parse_polynomial(text: str, nvars: int | None = None) -> Polynomial:
    """Inverse of :func:`format_polynomial`. ``#`` lines are comments."""
    terms: dict[tuple[int, ...], float] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("nvars=") and nvars is None:
                    nvars = int(tok.split("=", 1)[1])
            continue
        parts = line.split()
        try:
            coef = float(parts[0])
            exps = tuple(int(t) for t in parts[1:])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: malformed term {line!r}") from exc
        if nvars is None:
            nvars = len(exps)
        if len(exps) != nvars:
            raise ValueError(f"line {lineno}: expected {nvars} exponents, got {len(exps)}")
        terms[exps] = terms.get(exps, 0.0) + coef
    if nvars is None:
        raise ValueError("cannot infer the variable count of an empty polynomial without a header")
    return Polynomial(nvars, terms)


def iter_terms(p: Polynomial) -> Iterable[tuple[MultiIndex, float]]:
    for e, c in zip(p._exps.tolist(), p._coefs):
        yield MultiIndex(tuple(e)), float(c)
