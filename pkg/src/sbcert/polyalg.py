"""Sparse multivariate polynomials over named variables.

Terms are stored as an integer exponent matrix (one row per term, one column
per variable of the scope) next to a coefficient vector.  Rows are kept in
graded-lex order and collected, so two polynomials with the same terms have
identical arrays.  Polynomials are immutable.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

# Coefficients below this magnitude are treated as rounding dust.
DROP_TOL = 1e-14

_NAT = re.compile(r"(\d+)")


class DimensionMismatch(ValueError):
    """A point does not assign values to the variables a polynomial needs."""


class BasisTooSmall(ValueError):
    """A polynomial has a monomial that is missing from the requested basis."""


def var_key(name: str):
    """Natural sort key so that x2 sorts before x10."""
    return tuple(int(t) if t.isdigit() else t for t in _NAT.split(name))


def sort_vars(names: Iterable[str]) -> tuple[str, ...]:
    return tuple(sorted(set(names), key=var_key))


@dataclass(frozen=True)
class Monomial:
    """Product of variable powers, e.g. ``Monomial.of(x1=2, w1=1)``.

    ``powers`` holds (variable, exponent) pairs sorted by variable with no zero
    exponents, so equal monomials compare and hash equal.
    """

    powers: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        for v, e in self.powers:
            if e <= 0:
                raise ValueError(f"exponent of {v} must be positive, got {e}")
        names = [v for v, _ in self.powers]
        if names != sorted(names, key=var_key) or len(set(names)) != len(names):
            raise ValueError("powers must be sorted by variable without repeats")

    @classmethod
    def of(cls, mapping: Mapping[str, int] | None = None, **kw: int) -> "Monomial":
        merged = dict(mapping or {})
        merged.update(kw)
        return cls(tuple((v, int(merged[v])) for v in sort_vars(merged) if merged[v] != 0))

    @classmethod
    def from_exponents(cls, variables: Sequence[str], exps: Sequence[int]) -> "Monomial":
        return cls.of(dict(zip(variables, (int(e) for e in exps))))

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.powers)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.powers)

    def exponent(self, var: str) -> int:
        for v, e in self.powers:
            if v == var:
                return e
        return 0

    def exponents(self, variables: Sequence[str]) -> tuple[int, ...]:
        d = dict(self.powers)
        return tuple(d.get(v, 0) for v in variables)

    def __mul__(self, other: "Monomial") -> "Monomial":
        d = dict(self.powers)
        for v, e in other.powers:
            d[v] = d.get(v, 0) + e
        return Monomial.of(d)

    def __str__(self) -> str:
        if not self.powers:
            return "1"
        return "*".join(v if e == 1 else f"{v}^{e}" for v, e in self.powers)


def grlex_order(exps: np.ndarray) -> np.ndarray:
    """Permutation sorting exponent rows by total degree, then lex descending."""
    if exps.shape[0] == 0:
        return np.zeros(0, dtype=np.intp)
    keys = [-exps[:, j] for j in range(exps.shape[1] - 1, -1, -1)]
    keys.append(exps.sum(axis=1))
    return np.lexsort(keys)


def _collect(exps: np.ndarray, coeffs: np.ndarray):
    """Merge duplicate exponent rows, drop dust, and sort in grlex order."""
    if exps.shape[0] == 0:
        return exps.reshape(0, exps.shape[1]), coeffs.reshape(0)
    n = exps.shape[1]
    if n == 0:
        total = float(coeffs.sum())
        if abs(total) < DROP_TOL:
            return np.zeros((0, 0), dtype=np.int64), np.zeros(0)
        return np.zeros((1, 0), dtype=np.int64), np.array([total])
    span = exps.max(axis=0).astype(np.int64) + 1
    if np.sum(np.log2(span.astype(float))) < 62:
        mult = np.cumprod(np.concatenate([[1], span[:-1]]))
        codes = exps @ mult
        _, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
    else:
        _, first, inverse = np.unique(exps, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    summed = np.bincount(inverse, weights=coeffs, minlength=first.size)
    uexps = exps[first]
    keep = np.abs(summed) >= DROP_TOL
    uexps, summed = uexps[keep], summed[keep]
    order = grlex_order(uexps)
    return np.ascontiguousarray(uexps[order]), summed[order]


class Polynomial:
    """Immutable sparse polynomial with real coefficients.

    ``vars`` is the (naturally sorted) scope, ``exps`` an integer array of shape
    (terms, len(vars)) and ``coeffs`` the matching coefficients.
    """

    __slots__ = ("vars", "exps", "coeffs")

    def __init__(self, variables: Sequence[str], exps, coeffs, *, collect: bool = True):
        variables = tuple(variables)
        coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
        if variables:
            exps = np.asarray(exps, dtype=np.int64).reshape(-1, len(variables))
        else:
            exps = np.zeros((coeffs.shape[0], 0), dtype=np.int64)
        if exps.shape[0] != coeffs.shape[0]:
            raise ValueError("exponent rows and coefficients differ in length")
        if np.any(exps < 0):
            raise ValueError("negative exponent")
        ordered = sort_vars(variables)
        if len(ordered) != len(variables):
            raise ValueError(f"repeated variable in scope {variables}")
        if ordered != variables:
            perm = [variables.index(v) for v in ordered]
            exps = exps[:, perm]
            variables = ordered
        if collect:
            exps, coeffs = _collect(exps, coeffs)
        exps.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "vars", variables)
        object.__setattr__(self, "exps", exps)
        object.__setattr__(self, "coeffs", coeffs)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    def __reduce__(self):
        return (Polynomial, (self.vars, np.array(self.exps), np.array(self.coeffs)), None)

    # construction helpers

    @classmethod
    def zero(cls, variables: Sequence[str] = ()) -> "Polynomial":
        return cls(sort_vars(variables), np.zeros((0, len(set(variables))), dtype=np.int64), [])

    @classmethod
    def constant(cls, c: float, variables: Sequence[str] = ()) -> "Polynomial":
        variables = sort_vars(variables)
        return cls(variables, np.zeros((1, len(variables)), dtype=np.int64), [float(c)])

    @classmethod
    def var(cls, name: str) -> "Polynomial":
        return cls((name,), [[1]], [1.0])

    @classmethod
    def from_terms(cls, terms: Mapping[Monomial, float], variables: Sequence[str] = ()) -> "Polynomial":
        scope = sort_vars(list(variables) + [v for m in terms for v in m.variables])
        exps = np.array([m.exponents(scope) for m in terms], dtype=np.int64)
        return cls(scope, exps, list(terms.values()))

    # introspection

    @property
    def nterms(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        if self.nterms == 0:
            return -1
        return int(self.exps.sum(axis=1).max())

    def degree_in(self, var: str) -> int:
        if var not in self.vars or self.nterms == 0:
            return 0
        return int(self.exps[:, self.vars.index(var)].max())

    @property
    def is_zero(self) -> bool:
        return self.nterms == 0

    def monomials(self) -> list[Monomial]:
        return [Monomial.from_exponents(self.vars, row) for row in self.exps]

    def terms(self) -> dict[Monomial, float]:
        return dict(zip(self.monomials(), self.coeffs.tolist()))

    def coefficient(self, mono: Monomial) -> float:
        if any(v not in self.vars for v in mono.variables):
            return 0.0
        row = np.array(mono.exponents(self.vars))
        hit = np.nonzero((self.exps == row).all(axis=1))[0]
        return float(self.coeffs[hit[0]]) if hit.size else 0.0

    def used_vars(self) -> tuple[str, ...]:
        if self.nterms == 0:
            return ()
        return tuple(v for j, v in enumerate(self.vars) if self.exps[:, j].any())

    # scope handling

    def with_scope(self, variables: Sequence[str]) -> "Polynomial":
        """Re-express over a larger scope; vars that carry exponents must be kept."""
        variables = sort_vars(variables)
        if variables == self.vars:
            return self
        missing = [v for v in self.used_vars() if v not in variables]
        if missing:
            raise DimensionMismatch(f"scope {variables} drops used variables {missing}")
        exps = np.zeros((self.nterms, len(variables)), dtype=np.int64)
        for j, v in enumerate(variables):
            if v in self.vars:
                exps[:, j] = self.exps[:, self.vars.index(v)]
        return Polynomial(variables, exps, self.coeffs, collect=False)

    def trim(self) -> "Polynomial":
        """Drop scope variables that carry no exponent."""
        return self.with_scope(self.used_vars())

    # arithmetic

    @staticmethod
    def _coerce(other) -> "Polynomial":
        if isinstance(other, Polynomial):
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other))
        return NotImplemented

    def _align(self, other: "Polynomial"):
        scope = sort_vars(self.vars + other.vars)
        return self.with_scope(scope), other.with_scope(scope), scope

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        a, b, scope = self._align(other)
        return Polynomial(scope, np.vstack([a.exps, b.exps]), np.concatenate([a.coeffs, b.coeffs]))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.vars, self.exps, -self.coeffs, collect=False)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            if other == 0:
                return Polynomial.zero(self.vars)
            return Polynomial(self.vars, self.exps, self.coeffs * float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        a, b, scope = self._align(other)
        if a.nterms == 0 or b.nterms == 0:
            return Polynomial.zero(scope)
        exps = (a.exps[:, None, :] + b.exps[None, :, :]).reshape(a.nterms * b.nterms, len(scope))
        coeffs = np.outer(a.coeffs, b.coeffs).reshape(-1)
        return Polynomial(scope, exps, coeffs)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(other))
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Polynomial.constant(1.0, self.vars)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        a, b, _ = self._align(other)
        return a.exps.shape == b.exps.shape and np.array_equal(a.exps, b.exps) and np.array_equal(a.coeffs, b.coeffs)

    def __hash__(self):
        t = self.trim()
        return hash((t.vars, t.exps.tobytes(), t.coeffs.tobytes()))

    def allclose(self, other, atol: float = 1e-12, rtol: float = 1e-10) -> bool:
        diff = self - other
        if diff.is_zero:
            return True
        scale = max(np.abs(self._coerce(other).coeffs).max(initial=0.0), np.abs(self.coeffs).max(initial=0.0))
        return bool(np.abs(diff.coeffs).max() <= atol + rtol * scale)

    # evaluation

    def __call__(self, point) -> float:
        return poly_eval(self, point)

    def eval_batch(self, points, variables: Sequence[str] | None = None, chunk: int = 8192) -> np.ndarray:
        """Evaluate at many points.

        ``points`` has shape (N, k) with columns named by ``variables`` (default:
        this polynomial's scope), or is a mapping from variable to an (N,) array.
        """
        if isinstance(points, Mapping):
            missing = [v for v in self.used_vars() if v not in points]
            if missing:
                raise DimensionMismatch(f"no values for {missing}")
            cols = {v: np.asarray(points[v], dtype=float).reshape(-1) for v in self.used_vars()}
            n_pts = len(np.atleast_1d(next(iter(points.values())))) if points else 1
        else:
            arr = np.asarray(points, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            names = tuple(variables) if variables is not None else self.vars
            if arr.shape[1] != len(names):
                raise DimensionMismatch(f"expected {len(names)} columns, got {arr.shape[1]}")
            missing = [v for v in self.used_vars() if v not in names]
            if missing:
                raise DimensionMismatch(f"no values for {missing}")
            cols = {v: arr[:, names.index(v)] for v in self.used_vars()}
            n_pts = arr.shape[0]
        out = np.zeros(n_pts)
        if self.nterms == 0:
            return out
        used = [(j, v) for j, v in enumerate(self.vars) if v in cols]
        for lo in range(0, n_pts, chunk):
            hi = min(lo + chunk, n_pts)
            vals = np.ones((hi - lo, self.nterms))
            for j, v in used:
                e = self.exps[:, j]
                top = int(e.max())
                pw = np.ones((hi - lo, top + 1))
                x = cols[v][lo:hi]
                for k in range(1, top + 1):
                    pw[:, k] = pw[:, k - 1] * x
                vals *= pw[:, e]
            out[lo:hi] = vals @ self.coeffs
        return out

    # composition

    def compose(self, subst: Mapping[str, "Polynomial | float"], *, partial: bool = False) -> "Polynomial":
        return poly_compose(self, subst, partial=partial)

    def differentiate(self, var: str) -> "Polynomial":
        if var not in self.vars:
            return Polynomial.zero(self.vars)
        j = self.vars.index(var)
        e = self.exps[:, j]
        exps = self.exps.copy()
        exps[:, j] = np.maximum(e - 1, 0)
        return Polynomial(self.vars, exps, self.coeffs * e)

    # display

    def __str__(self) -> str:
        if self.nterms == 0:
            return "0"
        parts = []
        for mono, c in zip(self.monomials(), self.coeffs):
            body = str(mono)
            mag = abs(c)
            num = repr(float(mag)) if body == "1" or mag != 1.0 else ""
            term = num + ("*" if num and body != "1" else "") + (body if body != "1" else "")
            parts.append(("- " if c < 0 else "+ ") + term)
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]

    def __repr__(self) -> str:
        return f"Polynomial({str(self)!r})"


def poly_eval(p: Polynomial, x) -> float:
    """Evaluate ``p`` at one point (mapping var -> value, or values in ``p.vars`` order)."""
    if isinstance(x, Mapping):
        missing = [v for v in p.used_vars() if v not in x]
        if missing:
            raise DimensionMismatch(f"no values for {missing}")
        vals = np.array([float(x[v]) if v in x else 0.0 for v in p.vars])
    else:
        vals = np.atleast_1d(np.asarray(x, dtype=float))
        if vals.shape != (len(p.vars),):
            raise DimensionMismatch(f"expected {len(p.vars)} values for {p.vars}, got shape {vals.shape}")
    if p.nterms == 0:
        return 0.0
    return float(np.prod(vals[None, :] ** p.exps, axis=1) @ p.coeffs)


def poly_compose(p: Polynomial, subst: Mapping[str, "Polynomial | float"], *, partial: bool = False) -> Polynomial:
    """Substitute polynomials for the variables of ``p`` and expand."""
    subst = {v: (q if isinstance(q, Polynomial) else Polynomial.constant(float(q))) for v, q in subst.items()}
    used = p.used_vars()
    missing = [v for v in used if v not in subst]
    if missing and not partial:
        raise DimensionMismatch(f"no substitution for {missing}")
    for v in missing:
        subst[v] = Polynomial.var(v)
    scope = sort_vars([u for v in used for u in subst[v].vars])
    if p.nterms == 0:
        return Polynomial.zero(scope)
    images = {v: subst[v].with_scope(scope) for v in used}
    cols = [p.vars.index(v) for v in used]
    powers: dict[str, list[Polynomial]] = {}
    for v, j in zip(used, cols):
        top = int(p.exps[:, j].max())
        chain = [Polynomial.constant(1.0, scope)]
        for _ in range(top):
            chain.append(chain[-1] * images[v])
        powers[v] = chain
    # group terms by leading exponents so shared prefixes are multiplied once
    pieces_exps, pieces_coeffs = [], []
    cache: dict[tuple, Polynomial] = {(): Polynomial.constant(1.0, scope)}

    def prefix(key: tuple) -> Polynomial:
        if key not in cache:
            head = prefix(key[:-1])
            v = used[len(key) - 1]
            cache[key] = head * powers[v][key[-1]]
        return cache[key]

    sub = p.exps[:, cols]
    for row, c in zip(sub, p.coeffs):
        term = prefix(tuple(int(e) for e in row))
        pieces_exps.append(term.exps)
        pieces_coeffs.append(term.coeffs * c)
    return Polynomial(scope, np.vstack(pieces_exps), np.concatenate(pieces_coeffs))


class NoiseModel:
    """Independent zero-mean noise described by its per-dimension raw moments."""

    dim: int

    def moment(self, d: int, k: int) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianNoise(NoiseModel):
    """Diagonal zero-mean Gaussian noise with per-dimension variances."""

    variances: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
        if any(v < 0 for v in self.variances):
            raise ValueError("variances must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.variances)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.array(self.variances))

    def moment(self, d: int, k: int) -> float:
        # E[w^k] = sigma^k (k-1)!! for even k, 0 for odd k
        if k % 2:
            return 0.0
        if k == 0:
            return 1.0
        return self.variances[d] ** (k // 2) * math.prod(range(k - 1, 0, -2))

    def extended(self, extra: int) -> "GaussianNoise":
        return GaussianNoise(self.variances + (0.0,) * extra)


def gaussian_expectation(p: Polynomial, noise: NoiseModel, noise_vars: Sequence[str]) -> Polynomial:
    """Integrate out independent noise variables using their moments.

    ``noise_vars[d]`` is the variable carrying noise dimension ``d``.  The result
    lives on the remaining variables of ``p``.
    """
    noise_vars = tuple(noise_vars)
    if len(noise_vars) != noise.dim:
        raise DimensionMismatch(f"{len(noise_vars)} noise variables for {noise.dim}-dimensional noise")
    keep = [v for v in p.vars if v not in noise_vars]
    if p.nterms == 0:
        return Polynomial.zero(keep)
    factor = np.ones(p.nterms)
    for d, v in enumerate(noise_vars):
        if v not in p.vars:
            continue
        col = p.exps[:, p.vars.index(v)]
        table = np.array([noise.moment(d, k) for k in range(int(col.max()) + 1)])
        factor *= table[col]
    idx = [p.vars.index(v) for v in keep]
    return Polynomial(keep, p.exps[:, idx], p.coeffs * factor)


def coefficient_vector(p: Polynomial, basis: Sequence[Monomial]) -> np.ndarray:
    """Coefficients of ``p`` with respect to ``basis``; raises if the basis is too small."""
    index = {m: i for i, m in enumerate(basis)}
    out = np.zeros(len(basis))
    for mono, c in zip(p.monomials(), p.coeffs):
        if mono not in index:
            raise BasisTooSmall(f"monomial {mono} of the polynomial is not in the basis")
        out[index[mono]] = c
    return out


_ALLOWED_BIN = {ast.Add: "add", ast.Sub: "sub", ast.Mult: "mul", ast.Pow: "pow"}


class PolynomialSyntaxError(ValueError):
    pass


def parse_polynomial(text: str) -> Polynomial:
    """Parse strings like ``"x1 + 0.1*x2 - 2.5*x1^2*x2 + w1"``.

    Supports + - * ^ (``**`` is accepted too), parentheses, decimal literals and
    identifiers.  Exponents must be nonnegative integer literals.
    """
    src = text.replace("^", "**")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise PolynomialSyntaxError(f"cannot parse {text!r}: {exc.msg}") from None

    def walk(node) -> Polynomial:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return Polynomial.constant(float(node.value))
        if isinstance(node, ast.Name):
            return Polynomial.var(node.id)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = walk(node.operand)
            return -inner if isinstance(node.op, ast.USub) else inner
        if isinstance(node, ast.BinOp) and type(node.op) in _ALLOWED_BIN:
            left = walk(node.left)
            if isinstance(node.op, ast.Pow):
                exp = node.right
                if isinstance(exp, ast.Constant) and isinstance(exp.value, int) and exp.value >= 0:
                    return left ** exp.value
                raise PolynomialSyntaxError(f"exponent must be a nonnegative integer in {text!r}")
            right = walk(node.right)
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            return left * right
        raise PolynomialSyntaxError(f"unsupported expression {ast.dump(node)} in {text!r}")

    return walk(tree)
