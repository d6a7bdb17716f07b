"""Benchmark systems, obstacle motion and time-indexed unsafe sets.

State variables are ``x1..xn`` and noise variables ``w1..wn``; obstacle maps
are written over configuration variables ``o1..op``.  Obstacles are balls whose
configuration is the center, acting on the first ``p`` state coordinates
unless ``dims`` says otherwise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .polyalg import GaussianNoise, Polynomial, PolynomialSyntaxError, parse_polynomial, sort_vars
from .sos import SemiAlgebraicSet


class UnknownSystem(KeyError):
    pass


class InstanceFileError(ValueError):
    """Problem in a system definition file; ``line`` is 1-based when known."""

    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


def state_names(n: int) -> tuple[str, ...]:
    return tuple(f"x{d + 1}" for d in range(n))


def noise_names(n: int) -> tuple[str, ...]:
    return tuple(f"w{d + 1}" for d in range(n))


def config_names(p: int) -> tuple[str, ...]:
    return tuple(f"o{d + 1}" for d in range(p))


def sample_set(s: SemiAlgebraicSet, n: int, rng: np.random.Generator, bounds=None, max_rounds: int = 200) -> np.ndarray:
    """Uniform samples from a set by rejection from its bounding box."""
    if bounds is None:
        bounds = s.box_bounds()
        if bounds is None:
            raise ValueError("set has no box bounds; pass explicit bounds")
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    out, have = [], 0
    for _ in range(max_rounds):
        pts = rng.uniform(lo, hi, size=(max(n, 256), lo.size))
        pts = pts[s.contains(pts)]
        out.append(pts)
        have += pts.shape[0]
        if have >= n:
            break
    pts = np.vstack(out)
    if pts.shape[0] < n:
        raise ValueError("rejection sampling found too few points in the set")
    return pts[:n]


@dataclass(frozen=True)
class StochasticSystem:
    """x' = f(x, w) with polynomial drift and diagonal Gaussian noise."""

    drift: tuple[Polynomial, ...]
    noise: GaussianNoise
    safe_set: SemiAlgebraicSet
    initial_set: SemiAlgebraicSet
    check_initial: bool = field(default=True, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "drift", tuple(self.drift))
        n = len(self.drift)
        allowed = set(self.state_vars) | set(self.noise_vars)
        for k, f in enumerate(self.drift):
            extra = [v for v in f.used_vars() if v not in allowed]
            if extra:
                raise ValueError(f"drift component {k + 1} uses unknown variables {extra}")
        for s in (self.safe_set, self.initial_set):
            if s.scope != sort_vars(self.state_vars):
                raise ValueError(f"set scope {s.scope} differs from state {self.state_vars}")
        if n == 0:
            raise ValueError("empty drift")
        if self.check_initial:
            pts = sample_set(self.initial_set, 10_000, np.random.default_rng(0))
            if not np.all(self.safe_set.contains(pts)):
                raise ValueError("initial set is not contained in the safe set")

    @property
    def n(self) -> int:
        return len(self.drift)

    @property
    def state_vars(self) -> tuple[str, ...]:
        return state_names(len(self.drift))

    @property
    def noise_vars(self) -> tuple[str, ...]:
        return noise_names(self.noise.dim)

    def step(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Apply the drift row-wise to states (N, n) and noise samples (N, dim)."""
        cols = np.hstack([x, w])
        names = self.state_vars + self.noise_vars
        return np.column_stack([f.eval_batch(cols, names) for f in self.drift])

    def max_drift_degree(self) -> int:
        return max(f.degree for f in self.drift)

    def noise_is_additive(self) -> bool:
        """Each noise variable enters linearly with unit coefficient in its own component only."""
        for k, f in enumerate(self.drift):
            for d, w in enumerate(self.noise_vars):
                if w not in f.vars:
                    continue
                j = f.vars.index(w)
                col = f.exps[:, j]
                hit = col > 0
                if not np.any(hit):
                    continue
                if d != k or np.sum(hit) != 1 or col[hit][0] != 1 or f.exps[hit].sum() != 1 or f.coeffs[hit][0] != 1.0:
                    return False
        return True


@dataclass(frozen=True)
class ObstacleSpec:
    """Ball obstacle whose center follows o' = g(o)."""

    g: tuple[Polynomial, ...]
    o0: tuple[float, ...]
    radius: float
    dims: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(self.g))
        object.__setattr__(self, "o0", tuple(float(v) for v in self.o0))
        if len(self.g) != len(self.o0):
            raise ValueError("map arity differs from configuration dimension")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        allowed = set(config_names(self.p))
        for f in self.g:
            extra = [v for v in f.used_vars() if v not in allowed]
            if extra:
                raise ValueError(f"obstacle map uses unknown variables {extra}")
        if self.dims is None:
            object.__setattr__(self, "dims", tuple(range(self.p)))
        elif len(self.dims) != self.p:
            raise ValueError("dims must list one state coordinate per configuration coordinate")

    @property
    def p(self) -> int:
        return len(self.o0)

    def step(self, o: np.ndarray) -> np.ndarray:
        o = np.asarray(o, dtype=float)
        return np.array([f.eval_batch(o[None, :], config_names(self.p))[0] for f in self.g])

    def occupancy_poly(self, center: Sequence[float], state_vars: Sequence[str]) -> Polynomial:
        """r^2 - ||x_dims - center||^2."""
        h = Polynomial.constant(self.radius**2)
        for d, c in zip(self.dims, center):
            h = h - (Polynomial.var(state_vars[d]) - float(c)) ** 2
        return h

    def occupancy(self, center: Sequence[float], state_vars: Sequence[str]) -> SemiAlgebraicSet:
        return SemiAlgebraicSet((self.occupancy_poly(center, state_vars),), tuple(state_vars))

    def inside(self, x: np.ndarray, center: Sequence[float]) -> np.ndarray:
        x = np.atleast_2d(x)
        d = x[:, list(self.dims)] - np.asarray(center)[None, :]
        return np.sum(d * d, axis=1) <= self.radius**2


@dataclass(frozen=True)
class SafetyInstance:
    """System, moving obstacles and horizon.

    ``static_unsafe`` holds extra fixed unsafe sets (the lifted obstacle balls
    of a stacked system).  ``domain``, when given, is a set known to contain
    every state the system can visit within the horizon; local conditions may
    be restricted to it.
    """

    system: StochasticSystem
    obstacles: tuple[ObstacleSpec, ...] = ()
    horizon: int = 10
    name: str = "custom"
    static_unsafe: tuple[SemiAlgebraicSet, ...] = ()
    domain: SemiAlgebraicSet | None = None

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "static_unsafe", tuple(self.static_unsafe))
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        for ob in self.obstacles:
            if max(ob.dims) >= self.system.n:
                raise ValueError("obstacle acts on a coordinate the system does not have")
            traj = obstacle_trajectory(ob, self.horizon)
            if not np.all(np.isfinite(traj)):
                raise ValueError("obstacle configuration diverges within the horizon")

    def with_horizon(self, horizon: int) -> "SafetyInstance":
        return replace(self, horizon=int(horizon))

    def obstacle_centers(self, k: int) -> list[np.ndarray]:
        return [obstacle_trajectory(ob, k)[k] for ob in self.obstacles]


def obstacle_trajectory(spec: ObstacleSpec, H: int) -> np.ndarray:
    """Configurations o_0..o_H as an (H+1, p) array."""
    if H < 0:
        raise ValueError("H must be nonnegative")
    out = np.empty((H + 1, spec.p))
    out[0] = spec.o0
    for k in range(H):
        out[k + 1] = spec.step(out[k])
    return out


def complement_pieces(s: SemiAlgebraicSet) -> list[SemiAlgebraicSet]:
    """Closed pieces {-h_l >= 0} whose union covers the complement of s."""
    return [SemiAlgebraicSet((-h,), s.scope) for h in s.constraints]


def unsafe_set_at_time(instance: SafetyInstance, k: int) -> list[SemiAlgebraicSet]:
    """Complement pieces of the safe set plus the obstacle balls at time k."""
    if not 0 <= k <= instance.horizon:
        raise ValueError(f"time {k} outside [0, {instance.horizon}]")
    sysm = instance.system
    pieces = complement_pieces(sysm.safe_set) + list(instance.static_unsafe)
    for ob, c in zip(instance.obstacles, instance.obstacle_centers(k)):
        pieces.append(ob.occupancy(c, sysm.state_vars))
    return pieces


def _box(n, lo, hi):
    return SemiAlgebraicSet.box(state_names(n), lo, hi)


def _linear_map(M) -> tuple[Polynomial, ...]:
    M = np.asarray(M, dtype=float)
    o = [Polynomial.var(v) for v in config_names(M.shape[1])]
    return tuple(sum((float(M[i, j]) * o[j] for j in range(M.shape[1]) if M[i, j] != 0), Polynomial.zero()) for i in range(M.shape[0]))


# Quadrotor constants that the benchmark description leaves open.
QUADROTOR_T = 0.05
QUADROTOR_KT = 9.81
QUADROTOR_G = 0.0
QUADROTOR_KTAU = -5.0


def _unstable1d() -> StochasticSystem:
    return StochasticSystem(
        (parse_polynomial("1.05*x1 + w1"),), GaussianNoise((0.01,)), _box(1, [-1.0], [1.0]), _box(1, [-0.1], [0.1])
    )


def _unstable2d() -> StochasticSystem:
    return StochasticSystem(
        (parse_polynomial("1.05*x1 + w1"), parse_polynomial("1.05*x2 + w2")),
        GaussianNoise((0.01, 0.01)),
        _box(2, [-1.0, -1.0], [0.5, 0.5]),
        _box(2, [-0.05, -0.05], [0.05, 0.05]),
    )


def _vanderpol() -> StochasticSystem:
    return StochasticSystem(
        (parse_polynomial("x1 + 0.1*x2 + w1"), parse_polynomial("x2 + 0.1*(-x1 + (1 - x1^2)*x2) + w2")),
        GaussianNoise((4e-4, 4e-4)),
        _box(2, [-7.0, -7.0], [7.0, 7.0]),
        _box(2, [-5.0, -5.0], [5.0, 5.0]),
    )


def _lotka_volterra() -> StochasticSystem:
    T, theta, phi, psi, delta = 0.1, 1.1, 0.4, 0.4, 0.1
    v, p = Polynomial.var("x1"), Polynomial.var("x2")
    f1 = v + T * (theta * v * (1 - v) - phi * v * p) + Polynomial.var("w1")
    f2 = p - T * (psi * p - delta * v * p) + Polynomial.var("w2")
    return StochasticSystem(
        (f1, f2), GaussianNoise((0.01, 0.005)), _box(2, [0.0, 0.0], [10.0, 5.0]), _box(2, [6.0, 2.0], [7.0, 3.0])
    )


def _dubins() -> StochasticSystem:
    T, omega = 0.05, 0.8
    px, py, th, v = (Polynomial.var(f"x{d}") for d in range(1, 5))
    w = [Polynomial.var(f"w{d}") for d in range(1, 5)]
    f = (
        px + T * v * (1 - 0.5 * th**2) + w[0],
        py + T * v * (th - th**3 / 6.0) + w[1],
        th + T * omega + w[2],
        v + w[3],
    )
    return StochasticSystem(
        f,
        GaussianNoise((0.05, 0.05, 0.02, 0.02)),
        _box(4, [-5, -5, -1.5, 0], [5, 5, 1.5, 3]),
        _box(4, [-0.5, -0.5, -0.2, 0.5], [0.5, 0.5, 0.2, 1.0]),
    )


def _quadrotor() -> StochasticSystem:
    T, kT, g, ktau = QUADROTOR_T, QUADROTOR_KT, QUADROTOR_G, QUADROTOR_KTAU
    px, vx, th, om = (Polynomial.var(f"x{d}") for d in range(1, 5))
    w = [Polynomial.var(f"w{d}") for d in range(1, 5)]
    f = (
        px + T * vx + w[0],
        vx + T * (kT * (th - th**3 / 6.0) - g) + w[1],
        th + T * om + w[2],
        om + T * (ktau * th + 0.5 * th**3) + w[3],
    )
    return StochasticSystem(
        f,
        GaussianNoise((0.05, 0.1, 0.02, 0.05)),
        _box(4, [-5, -5, -1.5, -5], [5, 5, 1.5, 5]),
        _box(4, [-0.5, -0.5, -0.2, -0.5], [0.5, 0.5, 0.2, 0.5]),
    )


_OSC = [[0.85, -0.15], [0.02, 1.00]]

_BUILTINS = {
    "unstable1d": lambda: (_unstable1d(), ()),
    "unstable1d-obstacle": lambda: (_unstable1d(), (ObstacleSpec(_linear_map([[1.02]]), (0.8,), 0.2),)),
    "unstable2d": lambda: (_unstable2d(), ()),
    "vanderpol": lambda: (_vanderpol(), ()),
    "vanderpol-1obs": lambda: (_vanderpol(), (ObstacleSpec(_linear_map(_OSC), (-6.0, -6.0), 0.5),)),
    "vanderpol-2obs": lambda: (
        _vanderpol(),
        (ObstacleSpec(_linear_map(_OSC), (-6.0, -6.0), 0.5), ObstacleSpec(_linear_map(_OSC), (6.0, 6.0), 0.5)),
    ),
    "lotka-volterra": lambda: (_lotka_volterra(), ()),
    "dubins": lambda: (_dubins(), ()),
    "quadrotor": lambda: (_quadrotor(), ()),
    "quadrotor-1obs": lambda: (_quadrotor(), (ObstacleSpec(_linear_map([[1.0, 0.05], [0.0, 1.0]]), (3.0, -1.0), 0.5),)),
}

BUILTIN_NAMES = tuple(_BUILTINS)


def builtin_system(name: str, horizon: int = 10) -> SafetyInstance:
    """One of the benchmark instances, by name."""
    if name not in _BUILTINS:
        raise UnknownSystem(f"unknown system {name!r}; valid names: {', '.join(BUILTIN_NAMES)}")
    sysm, obstacles = _BUILTINS[name]()
    return SafetyInstance(sysm, obstacles, horizon, name)


# system definition files


def _find_line(text: str, needle: str) -> int | None:
    for k, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return k
    return None


def _poly_list(text, values, what) -> tuple[Polynomial, ...]:
    if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
        raise InstanceFileError(f"{what} must be a list of polynomial strings", _find_line(text, what.split(".")[-1]))
    out = []
    for s in values:
        try:
            out.append(parse_polynomial(s))
        except PolynomialSyntaxError as exc:
            raise InstanceFileError(str(exc), _find_line(text, s)) from None
    return tuple(out)


def _set_from(text, sec, prefix, n) -> SemiAlgebraicSet:
    if f"{prefix}_constraints" in sec:
        cons = _poly_list(text, sec[f"{prefix}_constraints"], f"sets.{prefix}_constraints")
        return SemiAlgebraicSet(cons, state_names(n))
    try:
        lo, hi = sec[f"{prefix}_lo"], sec[f"{prefix}_hi"]
    except KeyError as exc:
        raise InstanceFileError(f"[sets] needs {prefix}_lo/{prefix}_hi or {prefix}_constraints (missing {exc})",
                                _find_line(text, "[sets]")) from None
    if len(lo) != n or len(hi) != n:
        raise InstanceFileError(f"{prefix} bounds must have {n} entries", _find_line(text, f"{prefix}_lo"))
    return _box(n, lo, hi)


def parse_instance(text: str, name: str = "custom") -> SafetyInstance:
    """Build an instance from the TOML-style definition format."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise InstanceFileError(str(exc), int(m.group(1)) if m else None) from None
    for sec in ("system", "noise", "sets"):
        if sec not in doc:
            raise InstanceFileError(f"missing section [{sec}]")
    sysd = doc["system"]
    drift = _poly_list(text, sysd.get("drift"), "system.drift")
    n = len(drift)
    variances = doc["noise"].get("variances")
    if not isinstance(variances, list):
        raise InstanceFileError("noise.variances must be a list", _find_line(text, "variances"))
    try:
        system = StochasticSystem(
            drift, GaussianNoise(tuple(float(v) for v in variances)),
            _set_from(text, doc["sets"], "safe", n), _set_from(text, doc["sets"], "init", n),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, InstanceFileError):
            raise
        raise InstanceFileError(str(exc), _find_line(text, "[system]")) from None
    obstacles = []
    for k, ob in enumerate(doc.get("obstacle", [])):
        try:
            g = _poly_list(text, ob["map"], "obstacle.map")
            dims = tuple(int(d) - 1 for d in ob["dims"]) if "dims" in ob else None
            obstacles.append(ObstacleSpec(g, tuple(ob["initial"]), float(ob["radius"]), dims))
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, InstanceFileError):
                raise
            line = [i for i, ln in enumerate(text.splitlines(), 1) if ln.strip() == "[[obstacle]]"]
            raise InstanceFileError(f"obstacle {k + 1}: {exc}", line[k] if k < len(line) else None) from None
    return SafetyInstance(system, tuple(obstacles), int(sysd.get("horizon", 10)), str(sysd.get("name", name)))


def load_instance(path) -> SafetyInstance:
    path = Path(path)
    return parse_instance(path.read_text(), name=path.stem)


def _fmt_list(xs) -> str:
    return "[" + ", ".join(repr(float(x)) for x in xs) + "]"


def _set_lines(prefix, s: SemiAlgebraicSet) -> list[str]:
    b = s.box_bounds()
    if b is not None and len(s.constraints) == 2 * len(s.scope):
        return [f"{prefix}_lo = {_fmt_list(b[0])}", f"{prefix}_hi = {_fmt_list(b[1])}"]
    return [f"{prefix}_constraints = [" + ", ".join(f'"{h}"' for h in s.constraints) + "]"]


def instance_to_text(inst: SafetyInstance) -> str:
    """Serialize to the definition format read by :func:`parse_instance`."""
    sysm = inst.system
    lines = ["[system]", f'name = "{inst.name}"', f"horizon = {inst.horizon}",
             "drift = [" + ", ".join(f'"{f}"' for f in sysm.drift) + "]", "",
             "[noise]", f"variances = {_fmt_list(sysm.noise.variances)}", "", "[sets]"]
    lines += _set_lines("safe", sysm.safe_set) + _set_lines("init", sysm.initial_set)
    for ob in inst.obstacles:
        lines += ["", "[[obstacle]]", "map = [" + ", ".join(f'"{f}"' for f in ob.g) + "]",
                  f"initial = {_fmt_list(ob.o0)}", f"radius = {float(ob.radius)!r}",
                  "dims = [" + ", ".join(str(d + 1) for d in ob.dims) + "]"]
    return "\n".join(lines) + "\n"
