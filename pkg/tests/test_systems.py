import numpy as np
import pytest

from sbcert.polyalg import parse_polynomial
from sbcert.systems import (
    BUILTIN_NAMES,
    InstanceFileError,
    UnknownSystem,
    builtin_system,
    instance_to_text,
    obstacle_trajectory,
    parse_instance,
    unsafe_set_at_time,
)

TOML = """\
[system]
name = "toy"
horizon = 4
drift = ["0.5*x1 + w1", "x2 + 0.1*x1*x2 + w2"]

[noise]
variances = [0.01, 0.0]

[sets]
safe_lo = [-2.0, -2.0]
safe_hi = [2.0, 2.0]
init_lo = [-0.5, -0.5]
init_hi = [0.5, 0.5]

[[obstacle]]
map = ["0.9*o1", "o2"]
initial = [1.0, 1.0]
radius = 0.3
"""


def test_unstable1d_parameters():
    inst = builtin_system("unstable1d", horizon=5)
    sysm = inst.system
    assert inst.horizon == 5
    assert sysm.drift[0].allclose(parse_polynomial("1.05*x1 + w1").with_scope(sysm.drift[0].vars))
    assert sysm.noise.variances == (0.01,)
    lo, hi = sysm.safe_set.box_bounds()
    assert lo.tolist() == [-1.0] and hi.tolist() == [1.0]
    lo, hi = sysm.initial_set.box_bounds()
    assert lo.tolist() == [-0.1] and hi.tolist() == [0.1]


def test_vanderpol_parameters():
    sysm = builtin_system("vanderpol").system
    assert sysm.n == 2
    assert np.allclose(sysm.noise.variances, [4e-4, 4e-4])
    lo, hi = sysm.safe_set.box_bounds()
    assert lo.tolist() == [-7, -7] and hi.tolist() == [7, 7]
    lo, hi = sysm.initial_set.box_bounds()
    assert lo.tolist() == [-5, -5] and hi.tolist() == [5, 5]


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_construct(name):
    inst = builtin_system(name, horizon=3)
    assert inst.name == name
    x = np.zeros((1, inst.system.n))
    w = np.zeros((1, inst.system.noise.dim))
    assert np.all(np.isfinite(inst.system.step(x, w)))


def test_unknown_builtin():
    with pytest.raises(UnknownSystem, match="valid names"):
        builtin_system("nope")


def test_unsafe_pieces():
    assert len(unsafe_set_at_time(builtin_system("unstable1d"), 3)) == 2
    pieces = unsafe_set_at_time(builtin_system("unstable1d-obstacle"), 0)
    ball = pieces[-1].constraints[0]
    assert ball.allclose(parse_polynomial("0.04 - (x1 - 0.8)^2").with_scope(ball.vars))
    pieces = unsafe_set_at_time(builtin_system("vanderpol-2obs"), 0)
    centers = sorted(tuple(p.ball_data()[0]) for p in pieces[-2:])
    assert centers == [(-6.0, -6.0), (6.0, 6.0)]
    with pytest.raises(ValueError):
        unsafe_set_at_time(builtin_system("unstable1d", horizon=2), 3)


def test_obstacle_trajectory_linear():
    inst = builtin_system("unstable1d-obstacle", horizon=4)
    traj = obstacle_trajectory(inst.obstacles[0], 4)
    assert np.allclose(traj[:, 0], 0.8 * 1.02 ** np.arange(5))


def test_parse_and_round_trip():
    inst = parse_instance(TOML)
    assert inst.name == "toy" and inst.horizon == 4 and inst.system.n == 2
    assert len(inst.obstacles) == 1 and inst.obstacles[0].radius == 0.3
    again = parse_instance(instance_to_text(inst))
    assert instance_to_text(again) == instance_to_text(inst)
    for a, b in zip(inst.system.drift, again.system.drift):
        assert a.allclose(b)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtin_text_round_trip(name):
    inst = builtin_system(name, horizon=6)
    again = parse_instance(instance_to_text(inst))
    assert again.horizon == 6 and again.system.n == inst.system.n
    assert np.allclose(again.system.noise.variances, inst.system.noise.variances)
    for a, b in zip(inst.system.drift, again.system.drift):
        assert a.allclose(b)


def test_parse_error_reports_line():
    bad = TOML.replace('"0.9*o1"', '"0.9*o1 +* 2"')
    with pytest.raises(InstanceFileError) as exc:
        parse_instance(bad)
    assert exc.value.line == 16


def test_parse_rejects_initial_outside_safe():
    bad = TOML.replace("init_hi = [0.5, 0.5]", "init_hi = [3.0, 0.5]")
    with pytest.raises(InstanceFileError):
        parse_instance(bad)


def test_missing_section():
    with pytest.raises(InstanceFileError, match="noise"):
        parse_instance(TOML.replace("[noise]\nvariances = [0.01, 0.0]\n", ""))


def test_obstacle_rollout_examples():
    inst = builtin_system("unstable1d-obstacle", horizon=2)
    assert np.allclose(obstacle_trajectory(inst.obstacles[0], 2)[:, 0], [0.8, 0.816, 0.83232])
    osc = builtin_system("vanderpol-1obs").obstacles[0]
    assert np.allclose(obstacle_trajectory(osc, 1)[1], [-4.2, -6.12])
    assert obstacle_trajectory(osc, 0).shape == (1, 2)
    traj = obstacle_trajectory(osc, 6)
    for k in range(6):
        assert np.allclose(osc.step(traj[k]), traj[k + 1])


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_initial_states_are_safe(name):
    from sbcert.systems import sample_set

    inst = builtin_system(name)
    pts = sample_set(inst.system.initial_set, 10_000, np.random.default_rng(0))
    assert np.all(inst.system.safe_set.contains(pts))
    for ob, c in zip(inst.obstacles, inst.obstacle_centers(0)):
        assert not np.any(ob.inside(pts, c))


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtin_drift_structure(name):
    sysm = builtin_system(name).system
    assert sysm.noise_is_additive()
    # every builtin is at most cubic except the Dubins car, whose v * theta^3 term has degree 4
    assert sysm.max_drift_degree() <= (4 if name == "dubins" else 3)
