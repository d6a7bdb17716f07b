import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import polynomials, random_polynomial
from sbcert.polyalg import (
    BasisTooSmall,
    DimensionMismatch,
    GaussianNoise,
    Monomial,
    Polynomial,
    PolynomialSyntaxError,
    coefficient_vector,
    gaussian_expectation,
    parse_polynomial,
    poly_compose,
    poly_eval,
)

P = parse_polynomial


def test_eval_examples():
    assert poly_eval(P("x^2 + 1"), [2.0]) == 5.0
    assert poly_eval(Polynomial.zero(), []) == 0.0
    assert poly_eval(Polynomial.zero(("x1",)), [3.0]) == 0.0
    assert poly_eval(P("x1 + 0.1*x2"), {"x1": 1.0, "x2": 2.0}) == pytest.approx(1.2, abs=1e-15)


def test_eval_missing_variable():
    with pytest.raises(DimensionMismatch):
        poly_eval(P("x1*x2"), {"x1": 1.0})
    with pytest.raises(DimensionMismatch):
        poly_eval(P("x1*x2"), [1.0])


def test_compose_examples():
    x, w = Polynomial.var("x"), Polynomial.var("w")
    got = poly_compose(P("x^2"), {"x": 1.05 * x + w})
    want = 1.1025 * x * x + 2.1 * x * w + w * w
    assert got.allclose(want, atol=1e-14)
    assert poly_compose(x, {"x": x}) == x
    got = poly_compose(P("x1*x2"), {"x1": P("x1 + 1"), "x2": P("x2")})
    assert got == P("x1*x2 + x2")


def test_compose_unmapped():
    with pytest.raises(DimensionMismatch):
        poly_compose(P("x1*x2"), {"x1": P("x1")})


def test_expectation_examples():
    noise = GaussianNoise((0.01,))
    e = gaussian_expectation(P("(1.05*x + w1)^2"), noise, ["w1"])
    assert e.allclose(P("1.1025*x^2 + 0.01"), atol=1e-15)
    assert gaussian_expectation(P("w1^4"), GaussianNoise((1.0,)), ["w1"]).allclose(Polynomial.constant(3.0))
    assert gaussian_expectation(P("x*w1"), GaussianNoise((2.0,)), ["w1"]).is_zero


def test_gaussian_moments():
    g = GaussianNoise((2.0,))
    for k in range(0, 11):
        want = 0.0 if k % 2 else 2.0 ** (k // 2) * math.prod(range(k - 1, 0, -2))
        assert g.moment(0, k) == want


def test_coefficient_vector_examples():
    one, x = Monomial(), Monomial.of(x=1)
    assert np.array_equal(coefficient_vector(P("2*x + 3"), [one, x]), [3.0, 2.0])
    assert np.array_equal(coefficient_vector(Polynomial.zero(), [one, x]), [0.0, 0.0])
    with pytest.raises(BasisTooSmall):
        coefficient_vector(P("x^2"), [one, x])


def test_monomial_invariants():
    m = Monomial.of(x2=2, x1=0, x10=1)
    assert m.variables == ("x2", "x10")
    assert m.degree == 3
    assert Monomial.of(x1=1) * Monomial.of(x1=2) == Monomial.of(x1=3)


def test_drop_rounding_dust():
    p = P("x + 1") - P("x") - Polynomial.constant(1.0 - 1e-16)
    assert p.is_zero


def test_parse_errors():
    for bad in ["x^-1", "x^y", "sin(x)", "x/", "x^1.5"]:
        with pytest.raises(PolynomialSyntaxError):
            P(bad)


@given(polynomials(), polynomials(), st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_ring_homomorphism(p, q, x):
    pt = dict(zip(("x1", "x2"), x))
    s, m = poly_eval(p + q, pt), poly_eval(p * q, pt)
    a, b = poly_eval(p, pt), poly_eval(q, pt)
    assert s == pytest.approx(a + b, rel=1e-10, abs=1e-10)
    assert m == pytest.approx(a * b, rel=1e-10, abs=1e-10)


@given(polynomials(), polynomials(), polynomials(), st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2))
def test_compose_matches_evaluation(p, f1, f2, x):
    pt = dict(zip(("x1", "x2"), x))
    comp = poly_compose(p, {"x1": f1, "x2": f2}, partial=True)
    inner = {"x1": poly_eval(f1, pt), "x2": poly_eval(f2, pt)}
    want = poly_eval(p, inner)
    assert poly_eval(comp, pt) == pytest.approx(want, rel=1e-10, abs=1e-10 * (1 + abs(want)))


@given(polynomials(variables=("x1", "w1", "w2"), max_degree=5))
def test_zero_variance_is_substitution(p):
    e = gaussian_expectation(p, GaussianNoise((0.0, 0.0)), ["w1", "w2"])
    assert e.allclose(poly_compose(p, {"w1": 0.0, "w2": 0.0}, partial=True), atol=1e-14)


@given(polynomials(max_degree=6, max_terms=10))
def test_degree_of_product(p):
    q = P("x1^2 + x2 + 3")
    if not p.is_zero:
        assert (p * q).degree == p.degree + 2


def test_expectation_against_monte_carlo():
    rng = np.random.default_rng(7)
    var = (0.3, 0.05)
    noise = GaussianNoise(var)
    draws = rng.standard_normal((10**6, 2)) * np.sqrt(var)
    for _ in range(3):
        p = random_polynomial(rng, ("x1", "w1", "w2"), 6, 8)
        e = gaussian_expectation(p, noise, ["w1", "w2"])
        x = rng.uniform(-1, 1)
        vals = p.eval_batch({"x1": np.full(len(draws), x), "w1": draws[:, 0], "w2": draws[:, 1]})
        se = vals.std() / math.sqrt(len(vals))
        assert abs(poly_eval(e, {"x1": x}) - vals.mean()) <= 4 * se + 1e-12
