"""Sum-of-squares constraints compiled into SDP data.

A polynomial whose coefficients are affine in SDP decision variables is an
:class:`AffinePoly`.  :class:`SosProgram` collects Gram blocks, nonnegative
scalars and coefficient-matching equalities, and emits an
:class:`~sbcert.sdp.SdpProblem`.

Nonnegativity on a set ``{h_l >= 0}`` is certified with SOS multipliers::

    target - sum_l lam_l h_l + sum_j mu_j e_j = lam_0,    lam_*, mu_* SOS,

where the ``e_j`` are exclusion constraints: the identity only certifies
``target >= 0`` where every ``e_j <= 0`` (outside the excluded regions).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .polyalg import Monomial, Polynomial, grlex_order, sort_vars
from .sdp import SdpProblem, triu_index


class DegreeBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class SemiAlgebraicSet:
    """The set ``{x : h(x) >= 0 for every h in constraints}`` over ``scope``."""

    constraints: tuple[Polynomial, ...]
    scope: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "scope", sort_vars(self.scope))
        if not self.scope:
            raise ValueError("a semi-algebraic set needs a nonempty scope")
        for h in self.constraints:
            if h.is_zero:
                raise ValueError("zero constraint polynomial")
            extra = [v for v in h.used_vars() if v not in self.scope]
            if extra:
                raise ValueError(f"constraint uses {extra} outside scope {self.scope}")

    @classmethod
    def box(cls, variables: Sequence[str], lo: Sequence[float], hi: Sequence[float]) -> "SemiAlgebraicSet":
        """Per-dimension pairs ``x_d - lo_d >= 0`` and ``hi_d - x_d >= 0``."""
        cons = []
        for v, a, b in zip(variables, lo, hi):
            x = Polynomial.var(v)
            cons += [x - float(a), float(b) - x]
        return cls(tuple(cons), tuple(variables))

    @classmethod
    def ball(cls, variables: Sequence[str], center: Sequence[float], radius: float) -> "SemiAlgebraicSet":
        h = Polynomial.constant(float(radius) ** 2)
        for v, c in zip(variables, center):
            h = h - (Polynomial.var(v) - float(c)) ** 2
        return cls((h,), tuple(variables))

    @classmethod
    def halfspace(cls, h: Polynomial, scope: Sequence[str]) -> "SemiAlgebraicSet":
        return cls((h,), tuple(scope))

    def contains(self, points: np.ndarray, variables: Sequence[str] | None = None, tol: float = 0.0) -> np.ndarray:
        """Membership mask for an (N, k) array of points (columns named by ``variables``)."""
        variables = tuple(variables) if variables is not None else self.scope
        pts = np.asarray(points, dtype=float).reshape(-1, len(variables))
        mask = np.ones(pts.shape[0], dtype=bool)
        for h in self.constraints:
            mask &= h.eval_batch(pts, variables) >= -tol
        return mask

    def box_bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Bounds implied by linear per-variable constraints (None if some side is open)."""
        lo = np.full(len(self.scope), -np.inf)
        hi = np.full(len(self.scope), np.inf)
        for h in self.constraints:
            if h.degree != 1:
                continue
            used = h.used_vars()
            if len(used) != 1:
                continue
            v = used[0]
            a = h.coefficient(Monomial.of({v: 1}))
            c0 = h.coefficient(Monomial())
            j = self.scope.index(v)
            if a > 0:
                lo[j] = max(lo[j], -c0 / a)
            else:
                hi[j] = min(hi[j], -c0 / a)
        if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
            return lo, hi
        return None

    def ball_data(self) -> tuple[np.ndarray, float] | None:
        """(center, radius) if the set is a single ``r^2 - ||x - c||^2 >= 0`` constraint."""
        if len(self.constraints) != 1 or self.constraints[0].degree != 2:
            return None
        h = self.constraints[0]
        used = h.used_vars()
        center = np.zeros(len(used))
        for k, v in enumerate(used):
            if h.coefficient(Monomial.of({v: 2})) != -1.0:
                return None
            center[k] = h.coefficient(Monomial.of({v: 1})) / 2.0
        r2 = h.coefficient(Monomial()) + float(center @ center)
        if r2 <= 0:
            return None
        rebuilt = SemiAlgebraicSet.ball(used, center, np.sqrt(r2)).constraints[0]
        if not rebuilt.allclose(h, atol=1e-12):
            return None
        return center, float(np.sqrt(r2))

    def is_compact_description(self) -> bool:
        """True if a ball constraint or box pairs on every scope variable are present."""
        if self.box_bounds() is not None:
            return True
        for h in self.constraints:
            sub = SemiAlgebraicSet((h,), self.scope).ball_data()
            if sub is not None and set(h.used_vars()) == set(self.scope):
                return True
        return False

    def substitute(self, subst: Mapping[str, Polynomial], scope: Sequence[str]) -> "SemiAlgebraicSet":
        return SemiAlgebraicSet(tuple(h.compose(subst, partial=True) for h in self.constraints), tuple(scope))


def monomial_basis(variables: Sequence[str], half_degree: int) -> list[Monomial]:
    """All monomials of total degree <= ``half_degree`` in graded-lex order."""
    if half_degree < 0:
        raise ValueError("half_degree must be nonnegative")
    variables = sort_vars(variables)
    return [Monomial.from_exponents(variables, row) for row in basis_exponents(len(variables), half_degree)]


def basis_exponents(n: int, degree: int) -> np.ndarray:
    """Exponent rows of all monomials of degree <= ``degree`` in n variables, grlex."""
    rows = [e for d in range(degree + 1) for e in _compositions(n, d)]
    exps = np.array(rows, dtype=np.int64).reshape(-1, n)
    return exps[grlex_order(exps)]


def _compositions(n: int, d: int):
    if n == 0:
        if d == 0:
            yield ()
        return
    for c in itertools.combinations(range(d + n - 1), n - 1):
        parts, prev = [], -1
        for k in c:
            parts.append(k - prev - 1)
            prev = k
        parts.append(d + n - 2 - prev)
        yield tuple(parts)


def basis_size(n: int, half_degree: int) -> int:
    return comb(n + half_degree, half_degree)


class AffinePoly:
    """Polynomial over a fixed scope whose coefficients are affine in decision
    variables: coefficient of monomial k is ``const[k] + sum vals * var[cols]``
    over the triplets with ``rows == k``."""

    __slots__ = ("scope", "exps", "rows", "cols", "vals", "const")

    def __init__(self, scope, exps, rows, cols, vals, const, *, collect=True):
        self.scope = tuple(scope)
        exps = np.asarray(exps, dtype=np.int64).reshape(-1, len(self.scope))
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        const = np.asarray(const, dtype=float).reshape(-1)
        if collect:
            exps, rows, cols, vals, const = _collect_affine(exps, rows, cols, vals, const)
        self.exps, self.rows, self.cols, self.vals, self.const = exps, rows, cols, vals, const

    @classmethod
    def from_polynomial(cls, p: Polynomial, scope: Sequence[str]) -> "AffinePoly":
        p = p.with_scope(scope)
        return cls(p.vars, p.exps, [], [], [], p.coeffs)

    @classmethod
    def variable(cls, scope: Sequence[str], col: int, coeff: float = 1.0) -> "AffinePoly":
        """The constant monomial times a single decision variable."""
        return cls(scope, np.zeros((1, len(scope)), dtype=np.int64), [0], [col], [coeff], [0.0])

    @property
    def degree(self) -> int:
        return int(self.exps.sum(axis=1).max()) if self.exps.shape[0] else -1

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = AffinePoly.from_polynomial(Polynomial.constant(float(other), self.scope), self.scope)
        elif isinstance(other, Polynomial):
            other = AffinePoly.from_polynomial(other, self.scope)
        if other.scope != self.scope:
            raise ValueError("AffinePoly scopes differ")
        k = self.exps.shape[0]
        return AffinePoly(self.scope, np.vstack([self.exps, other.exps]),
                          np.concatenate([self.rows, other.rows + k]), np.concatenate([self.cols, other.cols]),
                          np.concatenate([self.vals, other.vals]), np.concatenate([self.const, other.const]))

    __radd__ = __add__

    def __neg__(self):
        return AffinePoly(self.scope, self.exps, self.rows, self.cols, -self.vals, -self.const, collect=False)

    def __sub__(self, other):
        if isinstance(other, AffinePoly):
            return self + (-other)
        return self + (-1.0 * other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, a: float) -> "AffinePoly":
        return AffinePoly(self.scope, self.exps, self.rows, self.cols, self.vals * a, self.const * a)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return self.scale(float(other))
        if isinstance(other, Polynomial):
            return self.mul_poly(other)
        return NotImplemented

    __rmul__ = __mul__

    def mul_poly(self, h: Polynomial) -> "AffinePoly":
        h = h.with_scope(self.scope)
        k = self.exps.shape[0]
        t = h.nterms
        exps = (self.exps[None, :, :] + h.exps[:, None, :]).reshape(-1, len(self.scope))
        offs = (np.arange(t) * k)[:, None]
        rows = (self.rows[None, :] + offs).reshape(-1)
        cols = np.tile(self.cols, t)
        vals = (h.coeffs[:, None] * self.vals[None, :]).reshape(-1)
        const = (h.coeffs[:, None] * self.const[None, :]).reshape(-1)
        return AffinePoly(self.scope, exps, rows, cols, vals, const)

    def linear_map(self, images: Mapping[tuple, Polynomial], scope: Sequence[str] | None = None) -> "AffinePoly":
        """Replace each monomial (keyed by its exponent tuple) with a polynomial image."""
        scope = tuple(scope) if scope is not None else self.scope
        out_exps, out_rows, out_cols, out_vals, out_const = [], [], [], [], []
        order = np.argsort(self.rows, kind="stable")
        rows_sorted = self.rows[order]
        starts = np.searchsorted(rows_sorted, np.arange(self.exps.shape[0] + 1))
        base = 0
        for k, row in enumerate(self.exps):
            img = images[tuple(int(e) for e in row)].with_scope(scope)
            t = img.nterms
            if t == 0:
                continue
            sel = order[starts[k]:starts[k + 1]]
            out_exps.append(img.exps)
            out_const.append(img.coeffs * self.const[k])
            if sel.size:
                out_rows.append((base + np.arange(t))[:, None].repeat(sel.size, axis=1).reshape(-1))
                out_cols.append(np.tile(self.cols[sel], t))
                out_vals.append((img.coeffs[:, None] * self.vals[sel][None, :]).reshape(-1))
            base += t
        if not out_exps:
            return AffinePoly.from_polynomial(Polynomial.zero(scope), scope)
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)
        return AffinePoly(scope, np.vstack(out_exps), cat(out_rows, np.int64), cat(out_cols, np.int64),
                          cat(out_vals, float), np.concatenate(out_const))

    def evaluate(self, x: np.ndarray) -> Polynomial:
        """Numeric polynomial obtained by plugging in decision values ``x``."""
        coeffs = self.const.copy()
        np.add.at(coeffs, self.rows, self.vals * x[self.cols])
        return Polynomial(self.scope, self.exps, coeffs)

    def monomial_keys(self) -> list[tuple]:
        return [tuple(int(e) for e in row) for row in self.exps]


def _collect_affine(exps, rows, cols, vals, const):
    n = exps.shape[1]
    if exps.shape[0] == 0:
        return exps, rows, cols, vals, const
    if n:
        span = exps.max(axis=0) + 1
        mult = np.cumprod(np.concatenate([[1], span[:-1]])).astype(np.int64)
        codes = exps @ mult
    else:
        codes = np.zeros(exps.shape[0], dtype=np.int64)
    _, first, inv = np.unique(codes, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    uexps = exps[first]
    order = grlex_order(uexps)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    newrow = rank[inv]
    uexps = uexps[order]
    uconst = np.zeros(uexps.shape[0])
    np.add.at(uconst, newrow, const)
    if rows.size:
        r = newrow[rows]
        ncol = int(cols.max()) + 1
        key = r * ncol + cols
        ukey, kinv = np.unique(key, return_inverse=True)
        uval = np.bincount(kinv.reshape(-1), weights=vals, minlength=ukey.size)
        keep = uval != 0.0
        ukey, uval = ukey[keep], uval[keep]
        r, c = ukey // ncol, ukey % ncol
    else:
        r = c = np.zeros(0, dtype=np.int64)
        uval = np.zeros(0)
    return uexps, r, c, uval, uconst


@dataclass
class SosAssertion:
    """``target >= 0`` on ``{h >= 0 for h in set} minus {e > 0 for e in exclusions}``.

    ``set_`` None means global.  ``multiplier_degrees`` (one even integer per
    constraint, then one per exclusion) overrides the default choice.
    ``basis_vars`` restricts the Gram bases to a subset of the variables, for
    targets and sets that do not involve the others.
    """

    target: AffinePoly
    set_: SemiAlgebraicSet | None = None
    exclusions: tuple[Polynomial, ...] = ()
    multiplier_degrees: tuple[int, ...] | None = None
    label: str = "assert"
    degree_budget: int | None = None
    basis_vars: tuple[str, ...] | None = None


def _even_ceil(d: int) -> int:
    return d + (d % 2)


def default_multiplier_degree(target_degree: int, h_degree: int) -> int:
    """Largest even degree with deg(lam * h) within the even ceiling of the target degree."""
    budget = _even_ceil(max(target_degree, h_degree))
    d = budget - h_degree
    return max(0, d - (d % 2))


@dataclass
class Fragment:
    """Blocks added for one assertion (kept so multipliers can be read back)."""

    label: str
    lam0: tuple[str, list[Monomial]]
    multipliers: list[tuple[str, list[Monomial], Polynomial, int]] = field(default_factory=list)
    rows: tuple[int, int] = (0, 0)
    budget: int = 0


class SosProgram:
    """Incremental builder for an SDP made of Gram blocks and SOS identities."""

    def __init__(self, scope: Sequence[str]):
        self.scope = sort_vars(scope)
        self.blocks: list[tuple[str, int]] = []
        self.scalars: list[str] = []
        self._ncols = 0
        self._offsets: dict[str, int] = {}
        self._scalar_col: dict[str, int] = {}
        self._eq_rows: list[np.ndarray] = []
        self._eq_cols: list[np.ndarray] = []
        self._eq_vals: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self._eq_exps: list[np.ndarray] = []
        self._chunk_at: dict[int, int] = {}
        self._m = 0
        self.objective: dict[int, float] = {}
        self.fragments: list[Fragment] = []
        self._gram_cache: dict[int, tuple] = {}

    # variables

    def _fresh(self, name: str) -> str:
        taken = set(self._offsets) | set(self._scalar_col)
        if name not in taken:
            return name
        for k in itertools.count(1):
            cand = f"{name}#{k}"
            if cand not in taken:
                return cand

    def new_block(self, name: str, n: int) -> str:
        if self.scalars:
            raise RuntimeError("declare free scalars after all blocks")
        name = self._fresh(name)
        self.blocks.append((name, n))
        self._offsets[name] = self._ncols
        self._ncols += n * (n + 1) // 2
        return name

    def new_nonneg(self, name: str) -> tuple[str, AffinePoly]:
        """Nonnegative scalar (a 1x1 PSD block) as a constant AffinePoly."""
        bid = self.new_block(name, 1)
        return bid, AffinePoly.variable(self.scope, self._offsets[bid])

    def new_free(self, name: str) -> tuple[str, AffinePoly]:
        name = self._fresh(name)
        self.scalars.append(name)
        self._scalar_col[name] = self._ncols
        self._ncols += 1
        return name, AffinePoly.variable(self.scope, self._scalar_col[name])

    def col(self, key) -> int:
        if isinstance(key, str):
            if key in self._scalar_col:
                return self._scalar_col[key]
            return self._offsets[key]
        bid, i, j = key
        n = dict(self.blocks)[bid]
        return self._offsets[bid] + triu_index(i, j, n)

    def gram(self, name: str, basis_exps: np.ndarray) -> tuple[str, AffinePoly]:
        """New PSD block G and the polynomial m^T G m over the given basis rows."""
        n = basis_exps.shape[0]
        bid = self.new_block(name, n)
        iu, ju = np.triu_indices(n)
        exps = basis_exps[iu] + basis_exps[ju]
        cols = self._offsets[bid] + np.arange(iu.size)
        vals = np.where(iu == ju, 1.0, 2.0)
        poly = AffinePoly(self.scope, exps, np.arange(iu.size), cols, vals, np.zeros(iu.size))
        return bid, poly

    # constraints

    def add_zero(self, p: AffinePoly) -> tuple[int, int]:
        """Require every coefficient of ``p`` to vanish; returns the row range."""
        if p.scope != self.scope:
            raise ValueError("scope mismatch")
        k = p.exps.shape[0]
        lo = self._m
        self._chunk_at[lo] = len(self._eq_rows)
        self._eq_exps.append(p.exps)
        self._eq_rows.append(p.rows + lo)
        self._eq_cols.append(p.cols)
        self._eq_vals.append(p.vals)
        self._rhs.append(-p.const)
        self._m += k
        return lo, self._m

    def minimize(self, terms: Mapping[str, float]) -> None:
        for key, w in terms.items():
            c = self.col(key)
            self.objective[c] = self.objective.get(c, 0.0) + float(w)

    def assert_nonneg(self, a: SosAssertion) -> Fragment:
        """Compile ``a`` into Gram blocks and coefficient-matching rows."""
        target = a.target
        cons = list(a.set_.constraints) if a.set_ is not None else []
        cons = [h.with_scope(self.scope) for h in cons]
        excl = [e.with_scope(self.scope) for e in a.exclusions]
        allh = cons + excl
        tdeg = max(target.degree, 0)
        if a.multiplier_degrees is not None:
            mdeg = list(a.multiplier_degrees)
            if len(mdeg) != len(allh):
                raise ValueError(f"{len(mdeg)} multiplier degrees for {len(allh)} constraints")
            if any(d < 0 or d % 2 for d in mdeg):
                raise ValueError("multiplier degrees must be even and nonnegative")
        else:
            mdeg = [default_multiplier_degree(tdeg, h.degree) for h in allh]
        budget = _even_ceil(max([tdeg] + [h.degree + d for h, d in zip(allh, mdeg)]))
        if a.degree_budget is not None:
            budget = a.degree_budget
            over = np.nonzero(target.exps.sum(axis=1) > budget)[0]
            if over.size:
                mono = Monomial.from_exponents(self.scope, target.exps[over[0]])
                raise DegreeBudgetError(f"{a.label}: monomial {mono} exceeds degree budget {budget}")
        n = len(self.scope)
        keep = np.ones(n, dtype=bool)
        if a.basis_vars is not None:
            keep = np.array([v in a.basis_vars for v in self.scope])

        def basis(half):
            sub = basis_exponents(int(keep.sum()), half)
            full = np.zeros((sub.shape[0], n), dtype=np.int64)
            full[:, keep] = sub
            return full

        frag = Fragment(a.label, ("", []), budget=budget)
        identity = target
        for k, (h, d) in enumerate(zip(allh, mdeg)):
            bexps = basis(d // 2)
            bid, lam = self.gram(f"{a.label}/mult{k}", bexps)
            sign = -1.0 if k < len(cons) else 1.0
            identity = identity + lam.mul_poly(h).scale(sign)
            frag.multipliers.append((bid, [Monomial.from_exponents(self.scope, r) for r in bexps], h, int(sign)))
        bexps = basis(budget // 2)
        bid0, lam0 = self.gram(f"{a.label}/sos", bexps)
        frag.lam0 = (bid0, [Monomial.from_exponents(self.scope, r) for r in bexps])
        identity = identity - lam0
        frag.rows = self.add_zero(identity)
        self.fragments.append(frag)
        return frag

    # output

    def build(self) -> SdpProblem:
        layout_cols = self._ncols
        # layout in SdpProblem puts all blocks first, then free scalars; our
        # column numbering interleaves them, so permute
        perm = np.empty(layout_cols, dtype=np.int64)
        pos = 0
        for bid, n in self.blocks:
            k = n * (n + 1) // 2
            perm[self._offsets[bid]:self._offsets[bid] + k] = np.arange(pos, pos + k)
            pos += k
        for s in self.scalars:
            perm[self._scalar_col[s]] = pos
            pos += 1
        rows = np.concatenate(self._eq_rows) if self._eq_rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(self._eq_cols) if self._eq_cols else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(self._eq_vals) if self._eq_vals else np.zeros(0)
        b = np.concatenate(self._rhs) if self._rhs else np.zeros(0)
        A = sp.csr_matrix((vals, (rows, perm[cols])), shape=(self._m, layout_cols))
        c = np.zeros(layout_cols)
        for col, w in self.objective.items():
            c[perm[col]] += w
        self._perm = perm
        return SdpProblem(tuple(self.blocks), tuple(self.scalars), c, A, b)

    def values(self, x_layout: np.ndarray) -> np.ndarray:
        """Map a solution in SdpProblem layout back to this builder's columns."""
        return x_layout[self._perm]

    def residual(self, x_cols: np.ndarray, rows: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        """Exponents and coefficients of the identity left over by ``x_cols`` on rows added by one call."""
        lo, hi = rows
        k = self._chunk_at[lo]
        r = np.bincount(self._eq_rows[k] - lo, weights=self._eq_vals[k] * x_cols[self._eq_cols[k]],
                        minlength=hi - lo)
        return self._eq_exps[k], r - self._rhs[k]

    def gram_matrix(self, x_cols: np.ndarray, bid: str) -> np.ndarray:
        n = dict(self.blocks)[bid]
        off = self._offsets[bid]
        v = x_cols[off:off + n * (n + 1) // 2]
        X = np.zeros((n, n))
        X[np.triu_indices(n)] = v
        return X + np.triu(X, 1).T


def gram_polynomial(basis: Sequence[Monomial], G: np.ndarray, variables: Sequence[str] | None = None) -> Polynomial:
    """m^T G m as a numeric polynomial."""
    scope = sort_vars(list(variables or []) + [v for m in basis for v in m.variables])
    E = np.array([m.exponents(scope) for m in basis], dtype=np.int64).reshape(-1, len(scope))
    n = E.shape[0]
    iu, ju = np.triu_indices(n)
    coeffs = np.where(iu == ju, 1.0, 2.0) * G[iu, ju]
    return Polynomial(scope, E[iu] + E[ju], coeffs)


# function-style wrappers around the builder


def gram_parameterize(basis: Sequence[Monomial], block_id: str = "G") -> tuple[SdpProblem, AffinePoly]:
    """One PSD block G over ``basis`` and the affine polynomial sum c_ij G_ij m_i m_j."""
    if not basis:
        raise ValueError("empty basis")
    scope = sort_vars(v for m in basis for v in m.variables) or ("_",)
    prog = SosProgram(scope)
    E = np.array([m.exponents(prog.scope) for m in basis], dtype=np.int64)
    _, poly = prog.gram(block_id, E)
    return prog.build(), poly


def assert_nonneg_on_set(assertion: SosAssertion, prob: SdpProblem | None = None,
                         objective: Mapping[str, float] | None = None) -> tuple[SdpProblem, SosProgram]:
    """Compile one assertion, appending to the blocks and rows of ``prob``.

    Decision variables referenced by ``assertion.target`` must use column
    numbers of ``prob``'s layout.  Returns the new problem and the builder (for
    reading multipliers back).
    """
    prog = SosProgram(assertion.target.scope)
    if prob is not None:
        for bid, n in prob.blocks:
            prog.new_block(bid, n)
        if prob.scalars:
            raise ValueError("extending problems with free scalars is not supported")
        A = prob.A.tocoo()
        prog._eq_rows.append(A.row.astype(np.int64))
        prog._eq_cols.append(A.col.astype(np.int64))
        prog._eq_vals.append(A.data)
        prog._rhs.append(prob.b.copy())
        prog._m = prob.m
        for col in np.nonzero(prob.c)[0]:
            prog.objective[int(col)] = float(prob.c[col])
    prog.assert_nonneg(assertion)
    if objective:
        prog.minimize(objective)
    return prog.build(), prog
