import numpy as np
import pytest
from scipy.stats import norm

from sbcert.oracle import (
    ESTIMATE_COLUMNS,
    FIXED_POINT,
    UNIFORM,
    McConfig,
    UnsupportedInstance,
    clopper_pearson,
    dp_row,
    dp_safety,
    estimates_csv,
    initial_grid,
    mc_row,
    mc_safety,
    simulate,
)
from sbcert.systems import builtin_system, parse_instance


def instance(drift, variance, horizon, safe=1.0, init=0.1):
    return parse_instance(f"""\
[system]
name = "toy"
horizon = {horizon}
drift = ["{drift}"]
[noise]
variances = [{variance}]
[sets]
safe_lo = [{-safe}]
safe_hi = [{safe}]
init_lo = [{-init}]
init_hi = [{init}]
""")


# x' = w with unit variance: safe iff every |w_k| <= 1
def white_noise(horizon):
    return instance("w1", 1.0, horizon, safe=1.0, init=0.0)


def test_clopper_pearson_closed_form():
    n = 1000
    lo, hi = clopper_pearson(n, n)
    assert hi == 1.0
    assert lo == pytest.approx(0.005 ** (1 / n), rel=1e-9)
    lo, hi = clopper_pearson(0, n)
    assert lo == 0.0 and hi == pytest.approx(1 - 0.005 ** (1 / n), rel=1e-9)


@pytest.mark.parametrize("horizon", [1, 2, 3])
def test_mc_matches_closed_form(horizon):
    exact = (norm.cdf(1) - norm.cdf(-1)) ** horizon
    r = mc_safety(white_noise(horizon), McConfig(trajectories=100_000, seed=1))
    assert r.ci_low <= exact <= r.ci_high


@pytest.mark.parametrize("horizon", [1, 2, 3])
def test_dp_matches_closed_form(horizon):
    exact = (norm.cdf(1) - norm.cdf(-1)) ** horizon
    r = dp_safety(white_noise(horizon), 400)
    assert r.infimum == pytest.approx(exact, abs=1e-3)


def test_deterministic_contraction_is_safe():
    inst = instance("0.5*x1", 0.0, 6)
    assert mc_safety(inst, McConfig(trajectories=1000)).estimate == 1.0
    r = dp_safety(inst, 200)
    assert r.infimum == 1.0


def test_start_inside_obstacle_is_unsafe():
    inst = builtin_system("unstable1d-obstacle", horizon=5)
    r = mc_safety(inst, McConfig(trajectories=1000, initial_sampling=FIXED_POINT, point=(0.8,)))
    assert r.estimate == 0.0 and r.safe == 0


def test_horizon_zero():
    inst = builtin_system("unstable1d", horizon=0)
    assert mc_safety(inst, McConfig(trajectories=500)).estimate == 1.0
    r = dp_safety(inst, 100)
    assert r.infimum == 1.0
    assert np.all(r.grid.values[0] == 1.0)


def test_simulate_reproducible():
    inst = builtin_system("unstable2d", horizon=10)
    x0 = np.zeros((5000, 2))
    a = simulate(inst, x0, seed=3)
    b = simulate(inst, x0, seed=3)
    c = simulate(inst, x0, seed=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_mc_reproducible_and_parallel_invariant():
    inst = builtin_system("unstable1d", horizon=10)
    cfg = McConfig(trajectories=20_000, seed=7, grid_per_dim=8)
    a = mc_safety(inst, cfg)
    assert a == mc_safety(inst, cfg)
    assert a == mc_safety(inst, cfg, workers=2)


def test_uniform_sampling_not_below_worst_case():
    inst = builtin_system("unstable1d", horizon=10)
    worst = mc_safety(inst, McConfig(trajectories=50_000, seed=2))
    uni = mc_safety(inst, McConfig(trajectories=50_000, seed=2, initial_sampling=UNIFORM))
    assert uni.ci_high >= worst.ci_low


def test_initial_grid_includes_corners():
    pts = initial_grid(builtin_system("vanderpol"), 4)
    assert pts.shape == (16, 2)
    assert {tuple(p) for p in pts} >= {(-5.0, -5.0), (5.0, 5.0), (-5.0, 5.0), (5.0, -5.0)}


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(trajectories=0)
    with pytest.raises(ValueError):
        McConfig(initial_sampling="nope")
    with pytest.raises(ValueError):
        McConfig(initial_sampling=FIXED_POINT)


@pytest.mark.parametrize("name", ["unstable1d", "unstable2d", "vanderpol-1obs"])
def test_dp_values_are_probabilities_and_monotone(name):
    r = dp_safety(builtin_system(name, horizon=6), 200 if name == "unstable1d" else 60)
    v = r.grid.values
    assert v.min() >= 0.0 and v.max() <= 1.0
    if not builtin_system(name).obstacles:
        # more remaining steps can only lower the safety probability
        assert np.all(np.diff(v, axis=0) <= 1e-12)


def test_dp_refinement_within_margin():
    inst = builtin_system("unstable1d", horizon=5)
    coarse, fine = dp_safety(inst, 1000), dp_safety(inst, 2000)
    assert abs(coarse.infimum - fine.infimum) <= max(coarse.margin, fine.margin) + 1e-6


def test_dp_and_mc_agree_on_unstable1d():
    inst = builtin_system("unstable1d", horizon=5)
    dp = dp_safety(inst, 2000)
    mc = mc_safety(inst, McConfig(trajectories=100_000, seed=0))
    assert abs(dp.infimum - mc.estimate) <= (mc.ci_high - mc.ci_low) + dp.margin


def test_dp_rejects_high_dimension():
    with pytest.raises(UnsupportedInstance):
        dp_safety(builtin_system("dubins", horizon=2), 10)


def test_csv_rows():
    inst = builtin_system("unstable1d", horizon=2)
    mc = mc_safety(inst, McConfig(trajectories=100, seed=5, grid_per_dim=2))
    dp = dp_safety(inst, 50)
    text = estimates_csv([mc_row(mc), dp_row(inst, dp)])
    lines = text.splitlines()
    assert lines[0] == ",".join(ESTIMATE_COLUMNS)
    assert lines[1].startswith("unstable1d,2,") and lines[1].endswith(",5,100")
    assert lines[2].endswith(",,")
