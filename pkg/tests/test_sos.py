from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sbcert.polyalg import Monomial, Polynomial, parse_polynomial
from sbcert.sdp import INFEASIBLE, OPTIMAL, min_eigenvalue, solve_sdp, sym_to_triu
from sbcert.sos import (
    AffinePoly,
    DegreeBudgetError,
    SemiAlgebraicSet,
    SosAssertion,
    assert_nonneg_on_set,
    basis_size,
    default_multiplier_degree,
    gram_parameterize,
    gram_polynomial,
    monomial_basis,
)


def solve_assertion(target: Polynomial, set_=None, scope=None, **kw):
    scope = scope or target.used_vars() or ("x",)
    a = SosAssertion(AffinePoly.from_polynomial(target, scope), set_, **kw)
    prob, prog = assert_nonneg_on_set(a)
    sol = solve_sdp(prob)
    return sol, prob, prog


def extracted_identity(sol, prob, prog):
    """(lam0, [(lam, h, sign)]) read back from a solved single-assertion program."""
    x = prog.values(prob.pack(sol.blocks, sol.scalars))
    frag = prog.fragments[0]
    bid0, basis0 = frag.lam0
    lam0 = gram_polynomial(basis0, prog.gram_matrix(x, bid0), prog.scope)
    mults = [(gram_polynomial(basis, prog.gram_matrix(x, bid), prog.scope), h, sign)
             for bid, basis, h, sign in frag.multipliers]
    grams = [prog.gram_matrix(x, bid0)] + [prog.gram_matrix(x, m[0]) for m in frag.multipliers]
    return lam0, mults, grams


def test_basis_sizes_and_order():
    b = monomial_basis(["x1", "x2"], 2)
    assert len(b) == 6
    assert b[0] == Monomial()
    assert [m.degree for m in b] == sorted(m.degree for m in b)
    assert len(monomial_basis(["x1", "x2", "x3"], 3)) == 20


@pytest.mark.parametrize("n", range(1, 7))
@pytest.mark.parametrize("d", range(0, 6))
def test_basis_size_binomial(n, d):
    assert basis_size(n, d) == comb(n + d, d)
    assert len(monomial_basis([f"x{k}" for k in range(1, n + 1)], d)) == comb(n + d, d)


def test_gram_parameterization_polynomial():
    basis = monomial_basis(["x"], 1)
    prob, poly = gram_parameterize(basis)
    G = np.array([[1.0, 1.0], [1.0, 1.0]])
    p = poly.evaluate(prob.pack({"G": G}))
    assert p.allclose(parse_polynomial("x^2 + 2*x + 1"))
    assert min_eigenvalue(G) >= -1e-12


def test_known_gram_representation():
    # x^4 + 2x^2 + 1 = (x^2 + 1)^2 over basis (1, x, x^2)
    basis = monomial_basis(["x"], 2)
    G = np.zeros((3, 3))
    idx = {m.degree: k for k, m in enumerate(basis)}
    G[idx[0], idx[0]] = G[idx[2], idx[2]] = 1.0
    G[idx[0], idx[2]] = G[idx[2], idx[0]] = 1.0
    assert gram_polynomial(basis, G).allclose(parse_polynomial("x^4 + 2*x^2 + 1"))


@given(seed=st.integers(0, 2**32 - 1))
def test_psd_gram_round_trip_nonnegative(seed):
    rng = np.random.default_rng(seed)
    basis = monomial_basis(["x1", "x2"], 2)
    L = rng.standard_normal((len(basis), 3))
    p = gram_polynomial(basis, L @ L.T, ["x1", "x2"])
    vals = p.eval_batch(rng.uniform(-3, 3, (10_000, 2)), ["x1", "x2"])
    assert vals.min() >= -1e-9


def test_linear_target_on_interval_feasible():
    sol, prob, prog = solve_assertion(parse_polynomial("x"), SemiAlgebraicSet.box(["x"], [0], [1]))
    assert sol.status == OPTIMAL


def test_negative_constant_on_interval_infeasible():
    sol, _, _ = solve_assertion(Polynomial.constant(-1.0, ["x"]), SemiAlgebraicSet.box(["x"], [0], [1]), scope=("x",))
    assert sol.status == INFEASIBLE


def test_positive_constant_globally_feasible():
    sol, prob, prog = solve_assertion(Polynomial.constant(1.0, ["x"]), None, scope=("x",))
    assert sol.status == OPTIMAL
    lam0, mults, _ = extracted_identity(sol, prob, prog)
    assert not mults
    assert lam0.allclose(Polynomial.constant(1.0, ["x"]), atol=1e-7)


@pytest.mark.parametrize("target,set_,mdeg", [
    ("2.2 - x1^2 - x2", SemiAlgebraicSet.box(["x1", "x2"], [-1, -1], [1, 1]), (2, 2, 2, 2)),
    ("1 + x1^3 - x1*x2", SemiAlgebraicSet.ball(["x1", "x2"], [0, 0], 0.9), None),
    ("x^4 - x^2 + 0.3", None, None),
])
def test_extracted_multipliers_reproduce_target(target, set_, mdeg, rng):
    p = parse_polynomial(target)
    sol, prob, prog = solve_assertion(p, set_, multiplier_degrees=mdeg)
    assert sol.status == OPTIMAL
    lam0, mults, grams = extracted_identity(sol, prob, prog)
    for G in grams:
        assert min_eigenvalue(G) >= -1e-7
    pts = rng.uniform(-2, 2, (10_000, len(prog.scope)))
    rebuilt = lam0.eval_batch(pts, prog.scope)
    for lam, h, sign in mults:
        rebuilt = rebuilt - sign * lam.eval_batch(pts, prog.scope) * h.eval_batch(pts, prog.scope)
    want = p.eval_batch(pts, prog.scope)
    assert np.max(np.abs(rebuilt - want) / (1 + np.abs(want))) <= 1e-6


def test_degree_budget_error():
    p = parse_polynomial("x^6 + 1")
    with pytest.raises(DegreeBudgetError):
        solve_assertion(p, None, degree_budget=4)


def test_default_multiplier_degrees():
    assert default_multiplier_degree(4, 1) == 2
    assert default_multiplier_degree(4, 2) == 2
    assert default_multiplier_degree(6, 2) == 4
    assert default_multiplier_degree(1, 1) == 0
    assert default_multiplier_degree(0, 3) == 0


def test_set_descriptions():
    box = SemiAlgebraicSet.box(["x1", "x2"], [-1, 0], [1, 2])
    lo, hi = box.box_bounds()
    assert np.allclose(lo, [-1, 0]) and np.allclose(hi, [1, 2])
    assert box.is_compact_description()
    ball = SemiAlgebraicSet.ball(["x1", "x2"], [0.5, -1], 2.0)
    c, r = ball.ball_data()
    assert np.allclose(c, [0.5, -1]) and r == pytest.approx(2.0)
    assert ball.is_compact_description()
    half = SemiAlgebraicSet.halfspace(parse_polynomial("x1"), ["x1", "x2"])
    assert not half.is_compact_description()
    pts = np.array([[0.0, 1.0], [2.0, 1.0]])
    assert box.contains(pts).tolist() == [True, False]


def test_sym_round_trip():
    A = np.array([[1.0, 2.0], [2.0, 3.0]])
    assert np.allclose(sym_to_triu(A), [1.0, 2.0, 3.0])


def test_residual_is_target_minus_identity(rng):
    p = parse_polynomial("1 + x1^3 - x1*x2")
    sol, prob, prog = solve_assertion(p, SemiAlgebraicSet.ball(["x1", "x2"], [0, 0], 0.9))
    x = prog.values(prob.pack(sol.blocks, sol.scalars))
    # perturb the certificate so the leftover is visible
    x = x + 1e-3 * rng.standard_normal(x.shape)
    frag = prog.fragments[0]
    exps, r = prog.residual(x, frag.rows)
    lam0 = gram_polynomial(frag.lam0[1], prog.gram_matrix(x, frag.lam0[0]), prog.scope)
    pts = rng.uniform(-1, 1, (1000, 2))
    rebuilt = lam0.eval_batch(pts, prog.scope)
    for bid, basis, h, sign in frag.multipliers:
        lam = gram_polynomial(basis, prog.gram_matrix(x, bid), prog.scope)
        rebuilt = rebuilt - sign * lam.eval_batch(pts, prog.scope) * h.eval_batch(pts, prog.scope)
    left = Polynomial(prog.scope, exps, r).eval_batch(pts, prog.scope)
    assert np.max(np.abs(left - (p.eval_batch(pts, prog.scope) - rebuilt))) <= 1e-10
    assert np.max(np.abs(left)) > 1e-5
