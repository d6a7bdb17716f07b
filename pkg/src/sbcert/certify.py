"""Stochastic barrier certificate synthesis and checking.

Three programs are available:

* time-invariant: one barrier B with B >= 1 on the unsafe set, B <= alpha on
  the initial set and E[B(f(x, w))] <= B(x) + beta on the safe set, giving
  P(safe for H steps) >= 1 - (alpha + H beta);
* meta: the same program on the system with obstacle configurations stacked
  into the state, so moving obstacles become a fixed unsafe set;
* time-varying: barriers B(., i) indexed by the number i of remaining steps,
  with one slack beta_i per step, giving 1 - (alpha + sum beta_i).

All programs are compiled over states rescaled to [-1, 1] boxes and the
barriers are mapped back to the original coordinates.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .polyalg import GaussianNoise, Polynomial, gaussian_expectation, sort_vars
from .sdp import MAX_ITER, NUMERICAL, OPTIMAL, SdpBackend, SdpSolution, solve_sdp, DEFAULT_TOL, DEFAULT_MAX_ITER
from .sos import AffinePoly, SemiAlgebraicSet, SosAssertion, SosProgram, basis_exponents
from .systems import (
    SafetyInstance,
    StochasticSystem,
    complement_pieces,
    config_names,
    obstacle_trajectory,
    state_names,
)

log = logging.getLogger(__name__)

TIME_INVARIANT = "time-invariant"
META = "meta"
TIME_VARYING = "time-varying"
MODES = (TIME_INVARIANT, META, TIME_VARYING)

NEG_TOL = 1e-6
# dense Schur complement budget used to refuse programs before assembling them
MAX_SCHUR_BYTES = 2.5e9
# trace bound on each barrier Gram block (scaled coordinates) for the retry
# after a numerical failure; shrinking the feasible set keeps bounds sound
FALLBACK_TRACE_CAP = 100.0


@dataclass(frozen=True)
class SolverStats:
    status: str
    iterations: int = 0
    solve_time: float = 0.0
    build_time: float = 0.0
    primal_infeasibility: float = math.inf
    dual_infeasibility: float = math.inf
    duality_gap: float = math.inf
    n_equalities: int = 0
    largest_block: int = 0
    message: str = ""
    timed_out: bool = False


@dataclass(frozen=True)
class SafetyBound:
    lower_bound: float
    raw_sum: float

    def __post_init__(self):
        if not 0.0 <= self.lower_bound <= 1.0:
            raise ValueError("lower bound must lie in [0, 1]")


def safety_bound(alpha: float, betas: Sequence[float] = (), tol: float = NEG_TOL) -> SafetyBound:
    """1 - (alpha + sum betas), clamped to [0, 1]; tiny negative solver slack is clipped."""
    vals = [float(alpha)] + [float(b) for b in betas]
    if any(v < -tol for v in vals) or any(not np.isfinite(v) for v in vals):
        raise ValueError(f"alpha/beta values {vals} are negative beyond {tol} or not finite")
    raw = sum(max(v, 0.0) for v in vals)
    return SafetyBound(min(1.0, max(0.0, 1.0 - raw)), raw)


@dataclass(frozen=True)
class Certificate:
    """Barrier polynomials in the original state variables.

    ``barriers[i]`` is B(., i) for i remaining steps in time-varying mode; the
    other modes hold a single barrier.  Empty when the solve did not succeed.
    """

    mode: str
    barriers: tuple[Polynomial, ...]
    alpha: float
    betas: tuple[float, ...]
    degree: int
    horizon: int
    state_vars: tuple[str, ...]
    stats: SolverStats
    infeasibility_ray: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "barriers", tuple(self.barriers))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.ok:
            if self.alpha < 0 or any(b < 0 for b in self.betas):
                raise ValueError("alpha and betas must be nonnegative")
            if any(B.degree > self.degree for B in self.barriers):
                raise ValueError("barrier degree exceeds the declared degree")
            want = self.horizon + 1 if self.mode == TIME_VARYING else 1
            if len(self.barriers) != want:
                raise ValueError(f"{self.mode} certificate needs {want} barriers")

    @property
    def status(self) -> str:
        return self.stats.status

    @property
    def ok(self) -> bool:
        return self.stats.status == OPTIMAL

    def barrier(self, i: int) -> Polynomial:
        """B(., i); time-invariant certificates return their single barrier."""
        return self.barriers[i] if self.mode == TIME_VARYING else self.barriers[0]

    def beta(self, i: int) -> float:
        return self.betas[i - 1] if self.mode == TIME_VARYING else self.betas[0]

    def bound(self) -> SafetyBound:
        if not self.ok:
            return SafetyBound(0.0, math.inf)
        if self.mode == TIME_VARYING:
            return safety_bound(self.alpha, self.betas)
        return safety_bound(self.alpha, [self.betas[0]] * self.horizon)


# stacked (meta) system


def _config_slices(instance: SafetyInstance) -> list[slice]:
    out, pos = [], instance.system.n
    for ob in instance.obstacles:
        out.append(slice(pos, pos + ob.p))
        pos += ob.p
    return out


def config_box(instance: SafetyInstance) -> tuple[np.ndarray, np.ndarray]:
    """Bounding box of every obstacle configuration o_0..o_H, padded."""
    los, his = [], []
    for ob in instance.obstacles:
        traj = obstacle_trajectory(ob, instance.horizon)
        lo, hi = traj.min(axis=0), traj.max(axis=0)
        pad = np.maximum(0.05 * (hi - lo), max(ob.radius, 1e-3))
        los.append(lo - pad)
        his.append(hi + pad)
    if not los:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(los), np.concatenate(his)


def build_meta_system(instance: SafetyInstance) -> SafetyInstance:
    """Stack obstacle configurations into the state.

    The result has state (x, o^1, ..., o^N), drift (f, g^1, ..., g^N), zero
    noise on the configuration coordinates, the obstacle balls as a fixed
    unsafe set in the stacked space, and initial set X_0 x {o_0}.  Its domain
    is the padded bounding box of the obstacle configurations reachable within
    the horizon (the configurations are deterministic, so only those matter).
    """
    if not instance.obstacles:
        return instance
    sysm = instance.system
    n = sysm.n
    slices = _config_slices(instance)
    nz = slices[-1].stop
    zvars = state_names(nz)
    drift = list(sysm.drift)
    static = list(instance.static_unsafe)
    pins = []
    for ob, sl in zip(instance.obstacles, slices):
        ren = {o: Polynomial.var(zvars[sl.start + k]) for k, o in enumerate(config_names(ob.p))}
        drift += [g.compose(ren, partial=True) for g in ob.g]
        h = Polynomial.constant(ob.radius**2)
        for k, d in enumerate(ob.dims):
            h = h - (Polynomial.var(zvars[d]) - Polynomial.var(zvars[sl.start + k])) ** 2
        static.append(SemiAlgebraicSet((h,), zvars))
        for k, o0 in enumerate(ob.o0):
            v = Polynomial.var(zvars[sl.start + k])
            pins += [v - o0, o0 - v]
    lift = lambda s: SemiAlgebraicSet(s.constraints, zvars)
    lo, hi = config_box(instance)
    cvars = zvars[n:]
    domain = SemiAlgebraicSet.box(cvars, lo, hi)
    domain = SemiAlgebraicSet(domain.constraints, zvars)
    if instance.domain is not None:
        domain = SemiAlgebraicSet(tuple(instance.domain.constraints) + domain.constraints, zvars)
    meta_sys = StochasticSystem(
        tuple(drift),
        sysm.noise.extended(nz - sysm.noise.dim),
        lift(sysm.safe_set),
        SemiAlgebraicSet(tuple(sysm.initial_set.constraints) + tuple(pins), zvars),
        check_initial=False,
    )
    return SafetyInstance(meta_sys, (), instance.horizon, f"{instance.name}-meta", tuple(static), domain)


def meta_state(instance: SafetyInstance, x: np.ndarray, k: int) -> np.ndarray:
    """Stacked states (x, o_k^1, ..., o_k^N) for an (N, n) array of states at time k."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cfg = [np.broadcast_to(obstacle_trajectory(ob, k)[k], (x.shape[0], ob.p)) for ob in instance.obstacles]
    return np.hstack([x] + cfg)


# rescaling


@dataclass(frozen=True)
class _Scaling:
    """x = center + scale * y per coordinate."""

    variables: tuple[str, ...]
    center: np.ndarray
    scale: np.ndarray

    def forward(self) -> dict[str, Polynomial]:
        return {v: float(c) + float(s) * Polynomial.var(v) for v, c, s in zip(self.variables, self.center, self.scale)}

    def backward(self) -> dict[str, Polynomial]:
        return {v: (Polynomial.var(v) - float(c)) / float(s) for v, c, s in zip(self.variables, self.center, self.scale)}


def _scaling_for(instance: SafetyInstance) -> _Scaling:
    sysm = instance.system
    zvars = sysm.state_vars
    lo = np.full(sysm.n, -1.0)
    hi = np.full(sysm.n, 1.0)
    for s in (sysm.safe_set, instance.domain):
        if s is None:
            continue
        b = _partial_bounds(s)
        for j, v in enumerate(zvars):
            if np.isfinite(b[0][j]) and np.isfinite(b[1][j]) and b[1][j] > b[0][j]:
                lo[j], hi[j] = b[0][j], b[1][j]
    return _Scaling(zvars, 0.5 * (lo + hi), 0.5 * (hi - lo))


def _partial_bounds(s: SemiAlgebraicSet) -> tuple[np.ndarray, np.ndarray]:
    """Per-variable bounds from linear single-variable constraints (inf where open)."""
    lo = np.full(len(s.scope), -np.inf)
    hi = np.full(len(s.scope), np.inf)
    for h in s.constraints:
        if h.degree != 1 or len(h.used_vars()) != 1:
            continue
        v = h.used_vars()[0]
        j = s.scope.index(v)
        a = _lin_coeff(h, v)
        c0 = float(h.coeffs[h.exps.sum(axis=1) == 0].sum())
        if a > 0:
            lo[j] = max(lo[j], -c0 / a)
        else:
            hi[j] = min(hi[j], -c0 / a)
    return lo, hi


def _lin_coeff(h: Polynomial, v: str) -> float:
    j = h.vars.index(v)
    sel = h.exps[:, j] == 1
    return float(h.coeffs[sel][0])


def _normalized(h: Polynomial) -> Polynomial:
    m = float(np.max(np.abs(h.coeffs))) if h.nterms else 1.0
    return h / m if m > 0 else h


def _pins(s: SemiAlgebraicSet | None, scope) -> dict[int, float]:
    """Variables fixed to a single value by paired linear constraints."""
    if s is None:
        return {}
    lo, hi = _partial_bounds(s)
    return {scope.index(v): 0.5 * (lo[j] + hi[j]) for j, v in enumerate(s.scope)
            if np.isfinite(lo[j]) and np.isfinite(hi[j]) and hi[j] - lo[j] <= 1e-12}


def _pin(p: AffinePoly, pins: dict[int, float]) -> AffinePoly:
    """Substitute constants for pinned variables."""
    if not pins:
        return p
    exps = p.exps.copy()
    factor = np.ones(exps.shape[0])
    for j, v in pins.items():
        factor *= float(v) ** exps[:, j]
        exps[:, j] = 0
    return AffinePoly(p.scope, exps, p.rows, p.cols, p.vals * factor[p.rows], p.const * factor)


def _localizing(s: SemiAlgebraicSet | None, scope) -> list[Polynomial]:
    """Constraint list used as multiplier targets.

    Box pairs become (y - a)(b - y); pinned variables are left out (they are
    substituted into the target instead, see :func:`_pin`).
    """
    if s is None:
        return []
    lo, hi = _partial_bounds(s)
    out, used = [], set()
    for j, v in enumerate(s.scope):
        if np.isfinite(lo[j]) and np.isfinite(hi[j]):
            used.add(v)
            if hi[j] - lo[j] <= 1e-12:
                continue
            y = Polynomial.var(v)
            out.append(_normalized((y - float(lo[j])) * (float(hi[j]) - y)))
    for h in s.constraints:
        if h.degree == 1 and len(h.used_vars()) == 1 and h.used_vars()[0] in used:
            continue
        out.append(_normalized(h))
    return [h.with_scope(scope) for h in out]


@dataclass
class _Scaled:
    """Instance data after substituting x = c + s y."""

    scope: tuple[str, ...]
    drift: tuple[Polynomial, ...]
    noise: GaussianNoise
    noise_vars: tuple[str, ...]
    safe_loc: list[Polynomial]
    init_loc: list[Polynomial]
    init_pins: dict[int, float]
    domain_loc: list[Polynomial]
    unsafe_pieces: list[list[Polynomial]]
    static_balls: list[Polynomial]
    obstacle_balls: list[list[Polynomial]]  # per wall-clock time
    scaling: _Scaling


def _scale_instance(instance: SafetyInstance) -> _Scaled:
    sysm = instance.system
    sc = _scaling_for(instance)
    fwd = sc.forward()
    scope = sort_vars(sysm.state_vars)
    drift = tuple(
        ((f.compose(fwd, partial=True) - float(c)) / float(s)).trim()
        for f, c, s in zip(sysm.drift, sc.center, sc.scale)
    )
    sub = lambda s: s.substitute(fwd, scope) if s is not None else None
    safe = sub(sysm.safe_set)
    pieces = [[_normalized(h).with_scope(scope) for h in p.constraints] for p in complement_pieces(safe)]
    static = [_normalized(h.compose(fwd, partial=True)).with_scope(scope) for s in instance.static_unsafe for h in s.constraints]
    balls = []
    for k in range(instance.horizon + 1):
        row = []
        for ob, ctr in zip(instance.obstacles, instance.obstacle_centers(k)):
            h = ob.occupancy_poly(ctr, sysm.state_vars).compose(fwd, partial=True)
            row.append(_normalized(h).with_scope(scope))
        balls.append(row)
    return _Scaled(
        scope, drift, sysm.noise, sysm.noise_vars,
        _localizing(safe, scope), _localizing(sub(sysm.initial_set), scope), _pins(sub(sysm.initial_set), scope),
        _localizing(sub(instance.domain), scope),
        pieces, static, balls, sc,
    )


# program assembly


class _Expectation:
    """E[m(f(y, w))] for monomials m, cached per exponent tuple."""

    def __init__(self, sc: _Scaled):
        self.sc = sc
        self.powers: list[list[Polynomial]] = [[Polynomial.constant(1.0)] for _ in sc.drift]
        self.cache: dict[tuple, Polynomial] = {}

    def power(self, d: int, k: int) -> Polynomial:
        pw = self.powers[d]
        while len(pw) <= k:
            pw.append(pw[-1] * self.sc.drift[d])
        return pw[k]

    def image(self, e: tuple) -> Polynomial:
        if e not in self.cache:
            p = Polynomial.constant(1.0)
            for d, k in enumerate(e):
                if k:
                    p = p * self.power(d, k)
            self.cache[e] = gaussian_expectation(p, self.sc.noise, self.sc.noise_vars).with_scope(self.sc.scope)
        return self.cache[e]

    def __call__(self, B: AffinePoly) -> AffinePoly:
        images = {e: self.image(e) for e in B.monomial_keys()}
        return B.linear_map(images, self.sc.scope)


def _drift_degree(sc: _Scaled) -> int:
    return max(max(f.degree, 0) for f in sc.drift)


def estimated_rows(instance: SafetyInstance, degree: int, mode: str) -> int:
    """Rough count of equality rows of the compiled program."""
    n = instance.system.n
    mdeg = degree * max(1, instance.system.max_drift_degree())
    mdeg += mdeg % 2
    per_step = math.comb(n + mdeg, n)
    if mode == TIME_VARYING:
        return instance.horizon * per_step + (instance.horizon + 1) * 2 * math.comb(n + degree, n)
    return per_step + 2 * math.comb(n + degree, n)


class _Assembler:
    def __init__(self, sc: _Scaled, degree: int):
        if degree < 2 or degree % 2:
            raise ValueError("barrier degree must be an even integer >= 2")
        self.sc = sc
        self.degree = degree
        self.prog = SosProgram(sc.scope)
        self.expect = _Expectation(sc)
        self.bexps = basis_exponents(len(sc.scope), degree // 2)
        self.n_assert = 0

    def barrier(self, name: str, trace_cap: float | None = None) -> tuple[str, AffinePoly]:
        bid, B = self.prog.gram(name, self.bexps)
        if trace_cap is not None:
            n = self.bexps.shape[0]
            _, slack = self.prog.new_nonneg(f"{bid}/slack")
            cols = np.array([self.prog.col((bid, i, i)) for i in range(n)])
            trace = AffinePoly(self.sc.scope, np.zeros((1, len(self.sc.scope)), dtype=np.int64),
                               np.zeros(n, dtype=np.int64), cols, np.ones(n), np.array([-float(trace_cap)]))
            self.prog.add_zero(trace + slack)
        return bid, B

    def nonneg(self, target: AffinePoly, cons: list[Polynomial], excl: list[Polynomial], label: str,
               basis_vars=None):
        s = SemiAlgebraicSet(tuple(cons), self.sc.scope) if cons else None
        self.prog.assert_nonneg(SosAssertion(target, s, tuple(excl), label=label, basis_vars=basis_vars))
        self.n_assert += 1

    def initial(self, target: AffinePoly):
        """target >= 0 on the initial set, with pinned coordinates substituted."""
        pins = self.sc.init_pins
        free = tuple(v for j, v in enumerate(self.sc.scope) if j not in pins)
        self.nonneg(_pin(target, pins), self.sc.init_loc, [], "initial", free if pins else None)

    def unsafe(self, B: AffinePoly, i: int, balls: list[Polynomial], tag: str):
        dom = self.sc.domain_loc
        for j, piece in enumerate(self.sc.unsafe_pieces):
            self.nonneg(B - 1.0, piece + dom, [], f"{tag}unsafe{i}/face{j}")
        for j, h in enumerate(self.sc.static_balls + balls):
            self.nonneg(B - 1.0, [h] + dom, [], f"{tag}unsafe{i}/ball{j}")


def _check_size(instance: SafetyInstance, degree: int, mode: str) -> str | None:
    rows = estimated_rows(instance, degree, mode)
    if 8.0 * rows**2 > MAX_SCHUR_BYTES:
        return f"about {rows} equality rows; the dense Schur complement would exceed {MAX_SCHUR_BYTES / 1e9:.1f} GB"
    return None


def _failed(mode, degree, instance, status, msg, build_time=0.0) -> tuple[Certificate, SafetyBound]:
    stats = SolverStats(status, build_time=build_time, message=msg)
    cert = Certificate(mode, (), math.nan, (), degree, instance.horizon, instance.system.state_vars, stats)
    return cert, cert.bound()


def _solve(asm: _Assembler, tol, max_iter, backend, time_limit) -> tuple[SdpSolution, np.ndarray, object]:
    prob = asm.prog.build()
    sol = solve_sdp(prob, tol=tol, max_iter=max_iter, backend=backend, time_limit=time_limit)
    x = asm.prog.values(prob.pack(sol.blocks, sol.scalars))
    return sol, x, prob


def _stats(sol: SdpSolution, prob, build_time: float) -> SolverStats:
    return SolverStats(
        sol.status, sol.iterations, sol.solve_time, build_time, sol.primal_infeasibility, sol.dual_infeasibility,
        sol.duality_gap, prob.m, max((n for _, n in prob.blocks), default=0), sol.message, sol.timed_out,
    )


def _radius(instance: SafetyInstance, sc: _Scaled) -> np.ndarray:
    """Per scaled variable, the largest |y| over safe set and domain (inf if unbounded)."""
    names = sc.scaling.variables
    R = np.full(len(sc.scope), np.inf)
    for s in (instance.system.safe_set, instance.domain):
        if s is None:
            continue
        lo, hi = _partial_bounds(s)
        for j, v in enumerate(s.scope):
            if v in names and v in sc.scope:
                k = names.index(v)
                c, w = sc.scaling.center[k], sc.scaling.scale[k]
                r = max(abs(lo[j] - c), abs(hi[j] - c)) / w
                i = sc.scope.index(v)
                R[i] = min(R[i], r)
    return R


def _slack(asm: _Assembler, x: np.ndarray, label: str, radius: np.ndarray) -> float:
    """Bound on the leftover of one SOS identity over the box of ``radius``.

    Adding it to the constant free in that condition (alpha or a beta) makes
    the condition hold despite equality residuals of the solver.  Returns 0
    when the set is unbounded in a variable the residual uses.
    """
    frag = next(f for f in asm.prog.fragments if f.label == label)
    exps, r = asm.prog.residual(x, frag.rows)
    nz = r != 0
    mag = np.prod(radius ** exps[nz], axis=1)
    if not np.all(np.isfinite(mag)):
        return 0.0
    return float(np.abs(r[nz]) @ mag)


def _unscale(p: Polynomial, sc: _Scaled, variables) -> Polynomial:
    return p.compose(sc.scaling.backward(), partial=True).with_scope(variables).trim()


def _with_fallback(once, instance: SafetyInstance, degree: int, kw: dict) -> tuple[Certificate, SafetyBound]:
    """Run ``once``; after a numerical failure retry with capped barrier traces."""
    if kw.get("trace_cap") is not None:
        return once(instance, degree, **kw)
    t0 = time.perf_counter()
    cert, bound = once(instance, degree, **kw)
    st = cert.stats
    if st.status not in (NUMERICAL, MAX_ITER) or st.timed_out or st.n_equalities == 0:
        return cert, bound
    limit = kw.get("time_limit")
    if limit is not None:
        limit -= time.perf_counter() - t0
        if limit <= 0:
            return cert, bound
    log.info("%s degree %d: %s; retrying with barrier trace cap %g", cert.mode, degree, st.message,
             FALLBACK_TRACE_CAP)
    cert2, bound2 = once(instance, degree, **{**kw, "time_limit": limit, "trace_cap": FALLBACK_TRACE_CAP})
    msg = f"{cert2.stats.message} (retry with barrier trace cap {FALLBACK_TRACE_CAP:g} after: {st.message})"
    cert2 = replace(cert2, stats=replace(cert2.stats, message=msg))
    return cert2, bound2


def synth_time_invariant(instance: SafetyInstance, degree: int = 4, **kw) -> tuple[Certificate, SafetyBound]:
    """Single barrier minimizing alpha + H beta.

    The instance must not carry moving obstacles; stack them first with
    :func:`build_meta_system` (or call :func:`synth_meta`).  Keywords: ``tol``,
    ``max_iter``, ``backend``, ``time_limit`` and ``trace_cap`` (bound on the
    barrier Gram trace; by default applied only on a retry after a numerical
    failure).
    """
    if instance.obstacles:
        raise ValueError("instance has moving obstacles; use build_meta_system first")
    return _with_fallback(_ti_once, instance, degree, kw)


def _ti_once(
    instance: SafetyInstance,
    degree: int = 4,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    backend: SdpBackend | None = None,
    time_limit: float | None = None,
    mode: str = TIME_INVARIANT,
    trace_cap: float | None = None,
) -> tuple[Certificate, SafetyBound]:
    if instance.obstacles:
        raise ValueError("instance has moving obstacles; use build_meta_system first")
    t0 = time.perf_counter()
    too_big = _check_size(instance, degree, mode)
    if too_big:
        return _failed(mode, degree, instance, NUMERICAL, too_big)
    sc = _scale_instance(instance)
    asm = _Assembler(sc, degree)
    prog = asm.prog
    bid, B = asm.barrier("B", trace_cap)
    a_id, alpha = prog.new_nonneg("alpha")
    b_id, beta = prog.new_nonneg("beta")
    asm.unsafe(B, 0, [], "")
    asm.initial(alpha - B)
    asm.nonneg(B - asm.expect(B) + beta, sc.safe_loc + sc.domain_loc, sc.static_balls, "martingale")
    prog.minimize({a_id: 1.0, b_id: float(instance.horizon)})
    build = time.perf_counter() - t0
    sol, x, prob = _solve(asm, tol, max_iter, backend, time_limit)
    stats = _stats(sol, prob, build)
    log.info("%s degree %d: %s in %d iterations (%.1fs)", mode, degree, sol.status, sol.iterations, sol.solve_time)
    vars_ = instance.system.state_vars
    if sol.status != OPTIMAL:
        cert = Certificate(mode, (), math.nan, (), degree, instance.horizon, vars_, stats, sol.certificate)
        return cert, cert.bound()
    R = _radius(instance, sc)
    a = max(float(x[prog.col(a_id)]), 0.0) + _slack(asm, x, "initial", R)
    b = max(float(x[prog.col(b_id)]), 0.0) + _slack(asm, x, "martingale", R)
    barrier = _unscale(B.evaluate(x), sc, vars_)
    cert = Certificate(mode, (barrier,), a, (b,), degree, instance.horizon, vars_, stats)
    return cert, cert.bound()


def synth_meta(instance: SafetyInstance, degree: int = 4, **kw) -> tuple[Certificate, SafetyBound]:
    """Time-invariant synthesis on the stacked system (obstacle-free instances pass through)."""
    return synth_time_invariant(build_meta_system(instance), degree, mode=META, **kw)


def synth_time_varying(instance: SafetyInstance, degree: int = 4, **kw) -> tuple[Certificate, SafetyBound]:
    """Barriers B(., 0..H) minimizing alpha + sum beta_i.

    B(., i) serves i remaining steps, i.e. wall-clock time k = H - i, so its
    obstacle constraints use the configuration at time H - i.  Keywords as
    for :func:`synth_time_invariant`.
    """
    if instance.horizon < 1:
        raise ValueError("time-varying synthesis needs a horizon of at least 1")
    return _with_fallback(_tv_once, instance, degree, kw)


def _tv_once(
    instance: SafetyInstance,
    degree: int = 4,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    backend: SdpBackend | None = None,
    time_limit: float | None = None,
    trace_cap: float | None = None,
) -> tuple[Certificate, SafetyBound]:
    H = instance.horizon
    t0 = time.perf_counter()
    too_big = _check_size(instance, degree, TIME_VARYING)
    if too_big:
        return _failed(TIME_VARYING, degree, instance, NUMERICAL, too_big)
    sc = _scale_instance(instance)
    asm = _Assembler(sc, degree)
    prog = asm.prog
    Bs = [asm.barrier(f"B{i}", trace_cap)[1] for i in range(H + 1)]
    a_id, alpha = prog.new_nonneg("alpha")
    betas = [prog.new_nonneg(f"beta{i}") for i in range(1, H + 1)]
    for i, B in enumerate(Bs):
        asm.unsafe(B, i, sc.obstacle_balls[H - i], "")
    asm.initial(alpha - Bs[H])
    for i in range(1, H + 1):
        target = Bs[i] - asm.expect(Bs[i - 1]) + betas[i - 1][1]
        asm.nonneg(target, sc.safe_loc + sc.domain_loc, sc.static_balls + sc.obstacle_balls[H - i], f"martingale{i}")
    prog.minimize({a_id: 1.0, **{bid: 1.0 for bid, _ in betas}})
    build = time.perf_counter() - t0
    sol, x, prob = _solve(asm, tol, max_iter, backend, time_limit)
    stats = _stats(sol, prob, build)
    log.info("time-varying degree %d H %d: %s in %d iterations (%.1fs)", degree, H, sol.status, sol.iterations,
             sol.solve_time)
    vars_ = instance.system.state_vars
    if sol.status != OPTIMAL:
        cert = Certificate(TIME_VARYING, (), math.nan, (), degree, H, vars_, stats, sol.certificate)
        return cert, cert.bound()
    R = _radius(instance, sc)
    a = max(float(x[prog.col(a_id)]), 0.0) + _slack(asm, x, "initial", R)
    bs = [max(float(x[prog.col(bid)]), 0.0) + _slack(asm, x, f"martingale{i}", R)
          for i, (bid, _) in enumerate(betas, start=1)]
    barriers = tuple(_unscale(B.evaluate(x), sc, vars_) for B in Bs)
    cert = Certificate(TIME_VARYING, barriers, a, tuple(bs), degree, H, vars_, stats)
    return cert, cert.bound()


def synthesize(instance: SafetyInstance, mode: str, degree: int = 4, **kw) -> tuple[Certificate, SafetyBound]:
    """Dispatch on mode name (``ti``/``meta``/``tv`` or the long names)."""
    mode = {"ti": TIME_INVARIANT, "tv": TIME_VARYING}.get(mode, mode)
    if mode == TIME_INVARIANT:
        return synth_time_invariant(instance, degree, **kw)
    if mode == META:
        return synth_meta(instance, degree, **kw)
    if mode == TIME_VARYING:
        return synth_time_varying(instance, degree, **kw)
    raise ValueError(f"unknown mode {mode!r}")


# sampling checks


@dataclass(frozen=True)
class CheckReport:
    """Worst violation (>= 0) per condition, and the sample count used."""

    violations: dict[str, float]
    tol: float
    samples: int

    @property
    def worst(self) -> float:
        return max(self.violations.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def failed_conditions(self) -> list[str]:
        return [k for k, v in self.violations.items() if v > self.tol]


def sample_region(constraints: Sequence[Polynomial], variables: Sequence[str], lo, hi, n: int,
                  rng: np.random.Generator, max_draws: int = 10**8) -> np.ndarray:
    """Uniform points of {h >= 0} inside the box [lo, hi] by rejection."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    out, have, drawn, batch = [], 0, 0, max(4 * n, 1024)
    while have < n:
        if drawn > max_draws:
            raise ValueError("region too small for rejection sampling")
        pts = rng.uniform(lo, hi, size=(batch, lo.size))
        drawn += batch
        mask = np.ones(batch, dtype=bool)
        for h in constraints:
            mask &= h.eval_batch(pts, variables) >= 0
        pts = pts[mask]
        out.append(pts)
        have += pts.shape[0]
        rate = max(have / drawn, 1e-4)
        batch = int(min(max((n - have) / rate * 1.2, 1024), 4e6 / max(lo.size, 1)))
    return np.vstack(out)[:n]


def _ball_box(h: Polynomial, variables, lo, hi):
    """Tighten [lo, hi] around a ball r^2 - sum (v_d - c_d)^2 with numeric center."""
    data = SemiAlgebraicSet((h,), variables).ball_data()
    lo, hi = lo.copy(), hi.copy()
    if data is None:
        return lo, hi
    center, r = data
    for c, v in zip(center, h.used_vars()):
        j = list(variables).index(v)
        lo[j], hi[j] = max(lo[j], c - r), min(hi[j], c + r)
    return lo, hi


def _sampling_box(instance: SafetyInstance, widen: float) -> tuple[np.ndarray, np.ndarray]:
    sc = _scaling_for(instance)
    half = sc.scale * (1.0 + widen)
    return sc.center - half, sc.center + half


def check_certificate(instance: SafetyInstance, cert: Certificate, samples: int = 100_000, tol: float = 1e-6,
                      seed: int = 0, widen: float = 0.5) -> CheckReport:
    """Evaluate every barrier condition at uniform random points of its region.

    Unsafe half-space pieces and global nonnegativity are sampled inside the
    safe-set box widened by ``widen`` times its half-width on each side.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not cert.ok:
        raise ValueError(f"certificate has status {cert.status}")
    if cert.mode == META:
        instance = build_meta_system(instance)
    elif instance.obstacles and cert.mode == TIME_INVARIANT:
        raise ValueError("time-invariant certificates do not cover moving obstacles")
    instance = instance.with_horizon(cert.horizon)
    sysm = instance.system
    vars_ = sysm.state_vars
    rng = np.random.default_rng(seed)
    wlo, whi = _sampling_box(instance, widen)
    slo, shi = _sampling_box(instance, 0.0)
    dom = list(instance.domain.constraints) if instance.domain is not None else []
    H = cert.horizon
    idx = range(H + 1) if cert.mode == TIME_VARYING else [0]
    viol: dict[str, float] = {}

    def record(name, vals):
        viol[name] = max(viol.get(name, 0.0), float(max(0.0, -np.min(vals))))

    expectations = {}

    def expect(i):
        if i not in expectations:
            subst = {v: f for v, f in zip(vars_, sysm.drift)}
            comp = cert.barrier(i).with_scope(vars_).compose(subst)
            expectations[i] = gaussian_expectation(comp, sysm.noise, sysm.noise_vars).with_scope(vars_)
        return expectations[i]

    for i in idx:
        B = cert.barrier(i)
        pts = rng.uniform(wlo, whi, size=(samples, len(vars_)))
        record(f"nonneg[{i}]", B.eval_batch(pts, vars_))
        k = H - i if cert.mode == TIME_VARYING else 0
        regions = [list(p.constraints) for p in complement_pieces(sysm.safe_set)]
        balls = [h for s in instance.static_unsafe for h in s.constraints]
        if cert.mode == TIME_VARYING:
            balls += [ob.occupancy_poly(c, vars_) for ob, c in zip(instance.obstacles, instance.obstacle_centers(k))]
        for cons in regions:
            pts = sample_region(cons + dom, vars_, wlo, whi, samples, rng)
            record(f"unsafe[{i}]", B.eval_batch(pts, vars_) - 1.0)
        for h in balls:
            if SemiAlgebraicSet((h,), vars_).ball_data() is not None:
                blo, bhi = _ball_box(h, vars_, wlo, whi)
                pts = sample_region([h] + dom, vars_, blo, bhi, samples, rng)
            else:
                pts = _lifted_ball_samples(instance, h, vars_, wlo, whi, samples, rng)
            record(f"unsafe[{i}]", B.eval_batch(pts, vars_) - 1.0)
    # initial condition
    ilo, ihi = _set_box(sysm.initial_set, slo, shi)
    pts = sample_region(list(sysm.initial_set.constraints), vars_, ilo, ihi, samples, rng)
    record("initial", cert.alpha - cert.barrier(H if cert.mode == TIME_VARYING else 0).eval_batch(pts, vars_))
    # martingale conditions on the safe set minus obstacles
    steps = range(1, H + 1) if cert.mode == TIME_VARYING else [1]
    for i in steps:
        k = H - i
        excl = [h for s in instance.static_unsafe for h in s.constraints]
        if cert.mode == TIME_VARYING:
            excl += [ob.occupancy_poly(c, vars_) for ob, c in zip(instance.obstacles, instance.obstacle_centers(k))]
        pts = sample_region(list(sysm.safe_set.constraints) + dom, vars_, slo, shi, samples, rng)
        for h in excl:
            pts = pts[h.eval_batch(pts, vars_) <= 0]
        Bi = cert.barrier(i if cert.mode == TIME_VARYING else 0)
        EB = expect(i - 1 if cert.mode == TIME_VARYING else 0)
        val = Bi.eval_batch(pts, vars_) - EB.eval_batch(pts, vars_) + cert.beta(i)
        record(f"martingale[{i}]" if cert.mode == TIME_VARYING else "martingale", val)
    return CheckReport(viol, tol, samples)


def _set_box(s: SemiAlgebraicSet, lo, hi):
    b = _partial_bounds(s)
    return np.where(np.isfinite(b[0]), b[0], lo), np.where(np.isfinite(b[1]), b[1], hi)


def _lifted_ball_samples(instance, h, vars_, lo, hi, n, rng):
    """Uniform points of {r^2 - sum_d (x_d - o_d)^2 >= 0} with o in the domain box.

    Configurations are drawn uniformly from the domain and positions uniformly
    from the ball around them, which is uniform on the region.
    """
    dlo, dhi = _partial_bounds(instance.domain) if instance.domain is not None else (lo, hi)
    lo = np.where(np.isfinite(dlo), dlo, lo)
    hi = np.where(np.isfinite(dhi), dhi, hi)
    pts = rng.uniform(lo, hi, size=(n, len(vars_)))
    pairs = []
    for j, v in enumerate(h.vars):
        for k, u in enumerate(h.vars):
            if k <= j:
                continue
            sel = (h.exps[:, j] == 1) & (h.exps[:, k] == 1) & (h.exps.sum(axis=1) == 2)
            if np.any(sel) and np.isfinite(dlo[vars_.index(u)]) and not np.isfinite(dlo[vars_.index(v)]):
                pairs.append((vars_.index(v), vars_.index(u)))
    r = math.sqrt(float(h.coeffs[h.exps.sum(axis=1) == 0].sum()))
    d = len(pairs)
    g = rng.standard_normal((n, d))
    g *= (r * rng.uniform(size=(n, 1)) ** (1.0 / d)) / np.linalg.norm(g, axis=1, keepdims=True)
    for c, (xi, oi) in enumerate(pairs):
        pts[:, xi] = pts[:, oi] + g[:, c]
    return pts


# export


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def certificate_to_text(cert: Certificate) -> str:
    """Plain-text export: header fields then one ``term`` line per monomial."""
    lines = [
        "# stochastic barrier certificate",
        f"mode {cert.mode}",
        f"status {cert.status}",
        f"degree {cert.degree}",
        f"horizon {cert.horizon}",
        "variables " + " ".join(cert.state_vars),
        f"alpha {_fmt(cert.alpha)}",
        "betas " + " ".join(_fmt(b) for b in cert.betas),
        f"bound {_fmt(cert.bound().lower_bound)}",
    ]
    for i, B in enumerate(cert.barriers):
        B = B.with_scope(cert.state_vars)
        lines.append(f"barrier {i} {B.nterms}")
        for e, c in zip(B.exps, B.coeffs):
            lines.append("term " + " ".join(str(int(k)) for k in e) + " " + _fmt(c))
    return "\n".join(lines) + "\n"


def write_certificate(cert: Certificate, path) -> None:
    Path(path).write_text(certificate_to_text(cert))


def parse_certificate(text: str) -> Certificate:
    """Inverse of :func:`certificate_to_text` (solver statistics other than status are not kept)."""
    head: dict[str, str] = {}
    barriers: list[tuple[list, list]] = []
    variables: tuple[str, ...] = ()
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key == "variables":
            variables = tuple(rest.split())
        elif key == "barrier":
            barriers.append(([], []))
        elif key == "term":
            parts = rest.split()
            barriers[-1][0].append([int(p) for p in parts[:-1]])
            barriers[-1][1].append(float(parts[-1]))
        else:
            head[key] = rest
    polys = tuple(Polynomial(variables, np.array(e, dtype=np.int64).reshape(-1, len(variables)), np.array(c))
                  for e, c in barriers)
    betas = tuple(float(b) for b in head.get("betas", "").split())
    return Certificate(head["mode"], polys, float(head["alpha"]), betas, int(head["degree"]), int(head["horizon"]),
                       variables, SolverStats(head.get("status", OPTIMAL)))


def read_certificate(path) -> Certificate:
    return parse_certificate(Path(path).read_text())
