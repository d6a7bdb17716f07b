"""Independent safety estimators: Monte Carlo simulation and a grid DP for dim <= 2.

Both are testing oracles, not verifiers.  Monte Carlo approximates the
infimum over the initial set by a deterministic grid of start points and
reports an exact binomial interval at the minimizing point.  The DP pushes
each cell center through the drift and spreads the mass with per-dimension
Gaussian CDF differences.
"""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import binomtest

from .polyalg import Polynomial
from .systems import SafetyInstance, obstacle_trajectory, sample_set

WORST_CASE_GRID = "worst-case-grid"
UNIFORM = "uniform-over-X0"
FIXED_POINT = "fixed-point"
SAMPLINGS = (WORST_CASE_GRID, UNIFORM, FIXED_POINT)
CONFIDENCE = 0.99

# stage tags keep screening, refinement and uniform streams disjoint
_SCREEN, _FULL, _UNIFORM = 0, 1, 2


class UnsupportedInstance(ValueError):
    pass


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings.

    Under the worst-case grid every grid point first gets
    ``screen_trajectories`` runs; the ``refine`` lowest points are then rerun
    with ``trajectories`` runs each and the smallest estimate is reported.
    """

    trajectories: int = 100_000
    seed: int = 0
    initial_sampling: str = WORST_CASE_GRID
    grid_per_dim: int = 32
    point: tuple[float, ...] | None = None
    screen_trajectories: int = 2000
    refine: int = 3

    def __post_init__(self):
        if self.trajectories < 1:
            raise ValueError("trajectories must be >= 1")
        if self.initial_sampling not in SAMPLINGS:
            raise ValueError(f"initial_sampling must be one of {SAMPLINGS}")
        if self.grid_per_dim < 1 or self.screen_trajectories < 1 or self.refine < 1:
            raise ValueError("grid_per_dim, screen_trajectories and refine must be >= 1")
        if self.initial_sampling == FIXED_POINT and self.point is None:
            raise ValueError("fixed-point sampling needs a point")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class McResult:
    instance: str
    horizon: int
    estimate: float
    ci_low: float
    ci_high: float
    safe: int
    trajectories: int
    seed: int
    point: tuple[float, ...] | None = None


def clopper_pearson(k: int, n: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="exact")
    return float(ci.low), float(ci.high)


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def _unsafe_mask(instance: SafetyInstance, x: np.ndarray, centers) -> np.ndarray:
    sysm = instance.system
    bad = ~sysm.safe_set.contains(x, sysm.state_vars)
    for s in instance.static_unsafe:
        bad |= s.contains(x, sysm.state_vars)
    for ob, c in zip(instance.obstacles, centers):
        bad |= ob.inside(x, c)
    return bad


def _centers(instance: SafetyInstance) -> list[list[np.ndarray]]:
    trajs = [obstacle_trajectory(ob, instance.horizon) for ob in instance.obstacles]
    return [[t[k] for t in trajs] for k in range(instance.horizon + 1)]


def simulate(instance: SafetyInstance, x0: np.ndarray, seed: int, key: tuple[int, ...] = ()) -> np.ndarray:
    """Safe flags for trajectories started at the rows of ``x0``.

    Noise at step k comes from a generator keyed by (seed, *key, k), so the
    outcome depends only on those keys and the row order.
    """
    sysm = instance.system
    x = np.array(x0, dtype=float).reshape(-1, sysm.n)
    centers = _centers(instance)
    alive = ~_unsafe_mask(instance, x, centers[0])
    std = sysm.noise.std
    for k in range(instance.horizon):
        w = _rng(seed, *key, k).standard_normal((x.shape[0], std.size)) * std
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        nxt = sysm.step(x[idx], w[idx])
        x[idx] = nxt
        alive[idx] = np.isfinite(nxt).all(axis=1) & ~_unsafe_mask(instance, nxt, centers[k + 1])
    return alive


def _count_point(args) -> int:
    instance, point, n, seed, stage, pid = args
    x0 = np.repeat(np.asarray(point, dtype=float)[None, :], n, axis=0)
    return int(np.sum(simulate(instance, x0, seed, (stage, pid))))


def initial_grid(instance: SafetyInstance, per_dim: int) -> np.ndarray:
    """Grid points (corners included) of the initial set's bounding box that lie in the set."""
    sysm = instance.system
    bounds = sysm.initial_set.box_bounds()
    if bounds is None:
        raise UnsupportedInstance("initial set has no bounding box from linear constraints")
    lo, hi = bounds
    axes = [np.linspace(a, b, per_dim) if per_dim > 1 else np.array([(a + b) / 2]) for a, b in zip(lo, hi)]
    pts = np.array(list(itertools.product(*axes)))
    pts = pts[sysm.initial_set.contains(pts, sysm.state_vars)]
    if pts.size == 0:
        raise UnsupportedInstance("no grid point falls inside the initial set")
    return pts


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def mc_safety(instance: SafetyInstance, cfg: McConfig = McConfig(), workers: int = 1) -> McResult:
    """Monte Carlo estimate of the safety probability with a 99% exact interval."""
    n = cfg.trajectories
    if cfg.initial_sampling == UNIFORM:
        x0 = sample_set(instance.system.initial_set, n, _rng(cfg.seed, _UNIFORM, 0))
        safe = int(np.sum(simulate(instance, x0, cfg.seed, (_UNIFORM, 1))))
        point = None
    else:
        if cfg.initial_sampling == FIXED_POINT:
            pts = np.asarray(cfg.point, dtype=float).reshape(1, -1)
            if pts.shape[1] != instance.system.n:
                raise ValueError("point dimension differs from the state dimension")
        else:
            pts = initial_grid(instance, cfg.grid_per_dim)
        cand = np.arange(len(pts))
        if len(pts) > cfg.refine:
            m = min(cfg.screen_trajectories, n)
            counts = _map(_count_point, [(instance, p, m, cfg.seed, _SCREEN, i) for i, p in enumerate(pts)], workers)
            cand = np.argsort(np.asarray(counts), kind="stable")[: cfg.refine]
        counts = _map(_count_point, [(instance, pts[i], n, cfg.seed, _FULL, int(i)) for i in cand], workers)
        j = int(np.argmin(counts))
        safe, point = counts[j], tuple(float(v) for v in pts[cand[j]])
    lo, hi = clopper_pearson(safe, n)
    return McResult(instance.name, instance.horizon, safe / n, lo, hi, safe, n, cfg.seed, point)


# grid dynamic programming


@dataclass(frozen=True)
class DpGrid:
    """Cell grid over the safe set's bounding box.

    ``values[k]`` holds the safety probability with k steps remaining,
    starting at time H - k.
    """

    cells: tuple[int, ...]
    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.cells) > 2:
            raise UnsupportedInstance("the grid DP supports at most two state dimensions")

    @property
    def width(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.cells)

    def edges(self, d: int) -> np.ndarray:
        return np.linspace(self.lo[d], self.hi[d], self.cells[d] + 1)

    def centers(self, d: int) -> np.ndarray:
        e = self.edges(d)
        return 0.5 * (e[:-1] + e[1:])


@dataclass(frozen=True)
class DpResult:
    grid: DpGrid
    safety: np.ndarray
    infimum: float
    margin: float
    argmin: tuple[float, ...]


def _cell_mesh(grid: DpGrid) -> np.ndarray:
    cs = [grid.centers(d) for d in range(len(grid.cells))]
    return np.array(list(itertools.product(*cs)))


def _unsafe_cells(instance: SafetyInstance, grid: DpGrid, centers, sub: int = 4) -> np.ndarray:
    """Cells whose interior meets the unsafe set at one time index.

    Set complements and static pieces are probed at ``sub`` interior points
    per dimension; ball obstacles use the exact distance to the cell.
    """
    sysm = instance.system
    mid = _cell_mesh(grid)
    w = grid.width
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    hit = np.zeros(len(mid), dtype=bool)
    for o in itertools.product(offs, repeat=len(grid.cells)):
        pts = mid + np.asarray(o) * w
        hit |= ~sysm.safe_set.contains(pts, sysm.state_vars)
        for s in instance.static_unsafe:
            hit |= s.contains(pts, sysm.state_vars)
    for ob, c in zip(instance.obstacles, centers):
        dims = list(ob.dims)
        lo = mid[:, dims] - w[dims] / 2
        hi = mid[:, dims] + w[dims] / 2
        near = np.clip(np.asarray(c)[None, :], lo, hi)
        hit |= np.sum((near - np.asarray(c)[None, :]) ** 2, axis=1) < ob.radius**2
    return hit.reshape(grid.cells)


def _push(instance: SafetyInstance, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean drift at zero noise and per-dimension std of the linearized noise."""
    sysm = instance.system
    names = sysm.state_vars + sysm.noise_vars
    cols = np.hstack([pts, np.zeros((len(pts), sysm.noise.dim))])
    mean = np.column_stack([f.eval_batch(cols, names) for f in sysm.drift])
    var = np.zeros_like(mean)
    for i, f in enumerate(sysm.drift):
        for j, wv in enumerate(sysm.noise_vars):
            if sysm.noise.variances[j] == 0 or wv not in f.vars:
                continue
            g: Polynomial = f.differentiate(wv)
            var[:, i] += g.eval_batch(cols, names) ** 2 * sysm.noise.variances[j]
    return mean, np.sqrt(var)


def _cell_probs(edges: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """(S, N) probabilities of landing in each cell of one dimension."""
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (edges[None, :] - mean[:, None]) / std[:, None]
    # zero spread: a step function at the mean
    z = np.where(std[:, None] > 0, z, np.where(edges[None, :] >= mean[:, None], np.inf, -np.inf))
    return np.diff(ndtr(z), axis=1)


def dp_safety(instance: SafetyInstance, cells) -> DpResult:
    """Backward recursion of the unsafe-reach probability on a cell grid."""
    sysm = instance.system
    n = sysm.n
    if n > 2:
        raise UnsupportedInstance(f"the grid DP supports at most two state dimensions, got {n}")
    cells = (int(cells),) * n if np.isscalar(cells) else tuple(int(c) for c in cells)
    if len(cells) != n or min(cells) < 1:
        raise ValueError("one positive cell count per state dimension is required")
    bounds = sysm.safe_set.box_bounds()
    if bounds is None:
        raise UnsupportedInstance("safe set has no bounding box from linear constraints")
    H = instance.horizon
    grid = DpGrid(cells, np.asarray(bounds[0], float), np.asarray(bounds[1], float), np.zeros((H + 1,) + cells))
    centers = _centers(instance)
    mean, std = _push(instance, _cell_mesh(grid))
    P = [_cell_probs(grid.edges(d), mean[:, d], std[:, d]) for d in range(n)]
    stay = np.prod([p.sum(axis=1) for p in P], axis=0)
    U = np.empty((H + 1,) + cells)
    U[0] = _unsafe_cells(instance, grid, centers[H]).astype(float)
    for k in range(1, H + 1):
        prev = U[k - 1]
        if n == 1:
            cont = P[0] @ prev
        else:
            cont = np.sum((P[0] @ prev) * P[1], axis=1)
        u = np.clip((1.0 - stay) + cont, 0.0, 1.0).reshape(cells)
        U[k] = np.where(_unsafe_cells(instance, grid, centers[H - k]), 1.0, u)
    values = 1.0 - U
    object.__setattr__(grid, "values", values)
    safety = values[H]
    init = _initial_cells(instance, grid)
    flat = np.where(init, safety, np.inf)
    j = np.unravel_index(int(np.argmin(flat)), cells)
    argmin = tuple(float(grid.centers(d)[j[d]]) for d in range(n))
    return DpResult(grid, safety, float(safety[j]), _margin(safety, init), argmin)


def _initial_cells(instance: SafetyInstance, grid: DpGrid) -> np.ndarray:
    """Cells meeting the initial set's bounding box."""
    bounds = instance.system.initial_set.box_bounds()
    if bounds is None:
        raise UnsupportedInstance("initial set has no bounding box from linear constraints")
    mask = np.ones(grid.cells, dtype=bool)
    for d in range(len(grid.cells)):
        e = grid.edges(d)
        ok = (e[1:] >= bounds[0][d]) & (e[:-1] <= bounds[1][d])
        shape = [1] * len(grid.cells)
        shape[d] = -1
        mask &= ok.reshape(shape)
    return mask


def _margin(values: np.ndarray, init: np.ndarray) -> float:
    """Largest jump between adjacent cells where at least one is an initial cell."""
    m = 0.0
    for d in range(values.ndim):
        diff = np.abs(np.diff(values, axis=d))
        a = np.take(init, np.arange(values.shape[d] - 1), axis=d)
        b = np.take(init, np.arange(1, values.shape[d]), axis=d)
        sel = a | b
        if np.any(sel):
            m = max(m, float(np.max(diff[sel])))
    return m


# CSV output

ESTIMATE_COLUMNS = ("instance", "H", "estimate", "ci_low", "ci_high", "seed", "trajectories")


def fmt(v: float) -> str:
    return format(float(v), ".12g")


def mc_row(r: McResult) -> list[str]:
    return [r.instance, str(r.horizon), fmt(r.estimate), fmt(r.ci_low), fmt(r.ci_high), str(r.seed), str(r.trajectories)]


def dp_row(instance: SafetyInstance, r: DpResult) -> list[str]:
    """DP rows report infimum -/+ margin as the interval; seed and trajectory count are empty."""
    lo, hi = max(0.0, r.infimum - r.margin), min(1.0, r.infimum + r.margin)
    return [instance.name, str(instance.horizon), fmt(r.infimum), fmt(lo), fmt(hi), "", ""]


def estimates_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ESTIMATE_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()
