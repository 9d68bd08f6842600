import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slafnet.polybasis import (
    CapacityError,
    MultiIndex,
    Polynomial,
    basis_cardinality,
    capacity_cap,
    enumerate_basis,
    enumerate_monomials,
    expand_features,
    format_polynomial,
    monomial_product_closure_check,
    parse_polynomial,
    poly_add,
    poly_eval,
    poly_eval_batch,
    poly_mul,
    poly_pow,
    poly_scale,
)


def _brute_basis(n, k):
    """Every exponent tuple with entries <= k and sum <= k, by exhaustive product."""
    return {e for e in itertools.product(range(k + 1), repeat=n) if sum(e) <= k}


def _pascal(n, k):
    """C(n + k, n) from the Pascal recurrence, independent of math.comb."""
    row = [1]
    for _ in range(n + k):
        row = [1] + [row[i] + row[i + 1] for i in range(len(row) - 1)] + [1]
    return row[n]


def _naive_eval(p, x):
    total = 0.0
    for mi, c in p.terms.items():
        term = c
        for xi, e in zip(x, mi.exponents):
            term *= xi**e
        total += term
    return total


def _random_poly(rng, n, terms=5, max_exp=3):
    d = {}
    for _ in range(terms):
        d[tuple(int(v) for v in rng.integers(0, max_exp + 1, size=n))] = float(rng.normal())
    return Polynomial(n, d)


def test_enumerate_basis_examples():
    assert [b.exponents for b in enumerate_basis(1, 3)] == [(0,), (1,), (2,), (3,)]
    assert [b.exponents for b in enumerate_basis(2, 2)] == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    b3 = enumerate_basis(3, 2)
    assert len(b3) == 10
    assert {b.exponents for b in b3} == _brute_basis(3, 2)


def test_enumerate_basis_is_sorted_unique():
    basis = enumerate_basis(3, 4)
    assert basis == sorted(basis)
    assert len(set(basis)) == len(basis)


def test_cardinality_examples():
    assert basis_cardinality(1, 0) == 1
    assert basis_cardinality(13, 8) == 203490 == _pascal(13, 8)


def test_cardinality_matches_enumeration_small():
    for n in range(1, 7):
        for k in range(0, 7):
            assert basis_cardinality(n, k) == len(enumerate_basis(n, k))


def test_cardinality_telescoping_identity():
    for n in range(1, 9):
        for k in range(0, 9):
            assert basis_cardinality(n, k) == sum(math.comb(j + n - 1, n - 1) for j in range(k + 1))


def test_capacity_cap_default_and_env(monkeypatch):
    monkeypatch.delenv("SLAFNET_CAPACITY_CAP", raising=False)
    assert capacity_cap() == 5_000_000
    monkeypatch.setenv("SLAFNET_CAPACITY_CAP", "50")
    assert capacity_cap() == 50
    with pytest.raises(CapacityError):
        enumerate_basis(3, 5)
    assert capacity_cap(7) == 7


def test_capacity_error_on_huge_basis():
    with pytest.raises(CapacityError):
        basis_cardinality(100, 8)


def test_multiindex_invariants():
    m = MultiIndex((2, 0, 1))
    assert m.degree == 3
    assert (m * MultiIndex((0, 1, 1))).exponents == (2, 1, 2)
    with pytest.raises(ValueError):
        MultiIndex((1, -1))


def test_mul_examples():
    x = Polynomial.variable(1, 0)
    one = Polynomial.constant(1, 1.0)
    sq = poly_mul(one + x, one + x)
    assert sq == Polynomial(1, {(0,): 1.0, (1,): 2.0, (2,): 1.0})
    x1, x2 = Polynomial.variable(2, 0), Polynomial.variable(2, 1)
    assert poly_mul(x1 + x2, x1 - x2) == Polynomial(2, {(2, 0): 1.0, (0, 2): -1.0})


def test_mul_pointwise_oracle():
    rng = np.random.default_rng(0)
    a, b = _random_poly(rng, 3), _random_poly(rng, 3)
    ab = poly_mul(a, b)
    for _ in range(50):
        x = rng.uniform(-1.5, 1.5, size=3)
        want = _naive_eval(a, x) * _naive_eval(b, x)
        assert abs(poly_eval(ab, x) - want) <= 1e-9 * max(1.0, abs(want))


def test_mul_nvars_mismatch():
    with pytest.raises(ValueError):
        poly_mul(Polynomial.variable(2, 0), Polynomial.variable(3, 0))


def test_mul_capacity_error():
    rng = np.random.default_rng(1)
    p = _random_poly(rng, 4, terms=30, max_exp=4)
    with pytest.raises(CapacityError):
        poly_mul(p, p, cap=10)


def test_pow_examples():
    x = Polynomial.variable(1, 0)
    one = Polynomial.constant(1, 1.0)
    assert poly_pow(one + x, 2) == Polynomial(1, {(0,): 1.0, (1,): 2.0, (2,): 1.0})
    p = Polynomial(2, {(0, 0): 0.5, (1, 1): -2.0, (3, 0): 1.0})
    assert p.degree == 3
    assert poly_pow(p, 2).degree == 6
    assert poly_pow(p, 0) == Polynomial.constant(2, 1.0)
    with pytest.raises(ValueError):
        poly_pow(p, -1)


def test_eval_examples():
    assert poly_eval(Polynomial.constant(3, 7.0), [0.3, -2.0, 5.0]) == 7.0
    assert poly_eval(Polynomial(2, {(2, 1): 1.0}), [2.0, 3.0]) == 12.0
    with pytest.raises(ValueError):
        poly_eval(Polynomial.variable(2, 0), [1.0, 2.0, 3.0])


def test_eval_matches_naive_on_random_polynomials():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        p = _random_poly(rng, n, terms=int(rng.integers(1, 8)))
        X = rng.uniform(-2, 2, size=(5, n))
        got = poly_eval_batch(p, X)
        want = np.array([_naive_eval(p, x) for x in X])
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


def test_canonical_form_has_no_zero_terms():
    p = Polynomial(2, {(1, 0): 1.0, (0, 1): 0.0})
    assert len(p) == 1
    q = poly_add(p, poly_scale(p, -1.0))
    assert q.is_zero() and q.degree == 0
    tiny = Polynomial(1, {(1,): 1e-13, (0,): 1.0})
    assert len(tiny) == 1


def test_closure_check_examples():
    assert monomial_product_closure_check(2, 1, 1)
    m = {a * b for a in enumerate_monomials(2, 1) for b in enumerate_monomials(2, 1)}
    assert {x.exponents for x in m} == {(2, 0), (1, 1), (0, 2)}
    for k1 in range(4):
        for k2 in range(4):
            assert monomial_product_closure_check(1, k1, k2)
    assert monomial_product_closure_check(4, 2, 3)


def test_closure_holds_everywhere_small():
    for n in range(1, 5):
        for k1 in range(4):
            for k2 in range(4):
                assert monomial_product_closure_check(n, k1, k2)


def test_text_format_round_trip():
    rng = np.random.default_rng(4)
    p = _random_poly(rng, 3, terms=6)
    text = format_polynomial(p)
    assert text.splitlines()[0].startswith("# polynomial nvars=3")
    assert parse_polynomial(text) == p
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    keys = [MultiIndex(tuple(int(t) for t in ln.split()[1:])) for ln in lines]
    assert keys == sorted(keys)


def test_parse_errors_name_line():
    with pytest.raises(ValueError, match="line 2"):
        parse_polynomial("1.0 1 0\nabc 1 1\n")


def test_expand_features_matches_direct_powers():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(7, 3))
    basis = enumerate_basis(3, 3)
    F = expand_features(X, basis)
    for c, b in enumerate(basis):
        assert np.allclose(F[:, c], np.prod(X ** np.array(b.exponents), axis=1), rtol=1e-13, atol=1e-13)


_polys = st.builds(
    lambda seed, n: _random_poly(np.random.default_rng(seed), n, terms=4, max_exp=3),
    st.integers(0, 2**32 - 1),
    st.just(3),
)


@settings(max_examples=40, deadline=None)
@given(a=_polys, b=_polys, c=_polys)
def test_mul_commutative_and_associative(a, b, c):
    assert poly_mul(a, b).allclose(poly_mul(b, a), rtol=1e-12)
    assert poly_mul(poly_mul(a, b), c).allclose(poly_mul(a, poly_mul(b, c)), rtol=1e-9, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(a=_polys, b=_polys, c=_polys, seed=st.integers(0, 2**32 - 1))
def test_eval_is_ring_homomorphism(a, b, c, seed):
    X = np.random.default_rng(seed).uniform(-1.5, 1.5, size=(10, 3))
    lhs = poly_eval_batch(poly_add(poly_mul(a, b), c), X)
    rhs = poly_eval_batch(a, X) * poly_eval_batch(b, X) + poly_eval_batch(c, X)
    assert np.all(np.abs(lhs - rhs) <= 1e-9 * np.maximum(1.0, np.abs(rhs)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), i=st.integers(1, 4))
def test_power_degree_multiplies(seed, i):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    p = _random_poly(rng, n, terms=3, max_exp=2)
    lead = [0] * n
    lead[0] = p.degree + 1
    p = p + Polynomial(n, {tuple(lead): 1.0 + float(rng.random())})
    assert poly_pow(p, i).degree == i * p.degree
