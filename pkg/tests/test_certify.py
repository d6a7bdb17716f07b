import numpy as np
import pytest

from sbcert.certify import (
    META,
    TIME_INVARIANT,
    TIME_VARYING,
    Certificate,
    build_meta_system,
    certificate_to_text,
    check_certificate,
    meta_state,
    parse_certificate,
    safety_bound,
    synthesize,
)
from sbcert.oracle import dp_safety
from sbcert.polyalg import parse_polynomial
from sbcert.sdp import OPTIMAL
from sbcert.systems import BUILTIN_NAMES, builtin_system

OBSTACLE_INSTANCES = [n for n in BUILTIN_NAMES if builtin_system(n).obstacles]


@pytest.fixture(scope="module")
def unstable1d_tv():
    return synthesize(builtin_system("unstable1d", horizon=5), "tv", 4)


@pytest.fixture(scope="module")
def unstable1d_ti():
    return synthesize(builtin_system("unstable1d", horizon=5), "ti", 4)


def test_safety_bound_arithmetic():
    assert safety_bound(0.1, [0.2, 0.3]).lower_bound == pytest.approx(0.4)
    assert safety_bound(0.9, [0.5]).lower_bound == 0.0
    assert safety_bound(-1e-9, [0.0]).lower_bound == 1.0
    with pytest.raises(ValueError):
        safety_bound(-0.1, [])
    with pytest.raises(ValueError):
        safety_bound(float("nan"), [])


def test_meta_system_shapes():
    meta = build_meta_system(builtin_system("unstable1d-obstacle"))
    assert meta.system.n == 2
    want = [parse_polynomial("1.05*x1 + w1"), parse_polynomial("1.02*x2")]
    for f, g in zip(meta.system.drift, want):
        assert f.allclose(g.with_scope(f.vars))
    assert meta.system.noise.variances[1] == 0.0
    assert not meta.obstacles
    assert build_meta_system(builtin_system("vanderpol-1obs")).system.n == 4
    assert build_meta_system(builtin_system("vanderpol-2obs")).system.n == 6


@pytest.mark.parametrize("name", OBSTACLE_INSTANCES)
def test_stacked_occupancy_matches_original(name):
    inst = builtin_system(name, horizon=10)
    meta = build_meta_system(inst)
    rng = np.random.default_rng(3)
    lo, hi = inst.system.safe_set.box_bounds()
    mismatches = 0
    for _ in range(10):
        ks = rng.integers(0, inst.horizon + 1, 1000)
        for k in np.unique(ks):
            m = int(np.sum(ks == k))
            centers = inst.obstacle_centers(int(k))
            x = rng.uniform(lo, hi, (m, inst.system.n))
            # half the points near an obstacle so both outcomes occur
            for j in range(0, m, 2):
                ob = inst.obstacles[j % len(inst.obstacles)]
                c = centers[j % len(inst.obstacles)]
                x[j, list(ob.dims)] = c + rng.uniform(-1.5, 1.5, ob.p) * ob.radius
            original = np.zeros(m, dtype=bool)
            for ob, c in zip(inst.obstacles, centers):
                original |= ob.inside(x, c)
            z = meta_state(inst, x, int(k))
            stacked = np.zeros(m, dtype=bool)
            for s in meta.static_unsafe:
                stacked |= s.contains(z)
            mismatches += int(np.sum(original != stacked))
    assert mismatches == 0


def test_tv_certificate_is_valid(unstable1d_tv):
    cert, bound = unstable1d_tv
    assert cert.ok and cert.mode == TIME_VARYING
    assert len(cert.barriers) == 6 and len(cert.betas) == 5
    assert 0.0 < bound.lower_bound <= 1.0
    report = check_certificate(builtin_system("unstable1d", horizon=5), cert, samples=100_000)
    assert report.passed, report.violations


def test_tv_bound_below_dp_value(unstable1d_tv):
    dp = dp_safety(builtin_system("unstable1d", horizon=5), 2000)
    assert unstable1d_tv[1].lower_bound <= dp.infimum + 1e-3


def test_time_varying_dominates(unstable1d_tv, unstable1d_ti):
    cert, bound = unstable1d_ti
    assert cert.ok and cert.mode == TIME_INVARIANT
    assert check_certificate(builtin_system("unstable1d", horizon=5), cert, samples=20_000).passed
    assert unstable1d_tv[1].lower_bound >= bound.lower_bound - 1e-6


def test_meta_certificate_is_valid():
    inst = builtin_system("unstable1d-obstacle", horizon=5)
    cert, bound = synthesize(inst, "meta", 4)
    assert cert.ok and cert.mode == META
    assert len(cert.state_vars) == 2
    assert check_certificate(inst, cert, samples=20_000).passed


def test_tampered_certificate_fails(unstable1d_tv):
    cert = unstable1d_tv[0]
    shifted = tuple(B + 0.5 for B in cert.barriers)
    bad = Certificate(cert.mode, shifted, cert.alpha, cert.betas, cert.degree, cert.horizon, cert.state_vars,
                      cert.stats)
    report = check_certificate(builtin_system("unstable1d", horizon=5), bad, samples=5_000)
    assert not report.passed
    assert report.failed_conditions()


def test_export_round_trip(unstable1d_tv):
    cert = unstable1d_tv[0]
    text = certificate_to_text(cert)
    again = parse_certificate(text)
    assert certificate_to_text(again) == text
    assert again.alpha == cert.alpha and again.betas == cert.betas
    for a, b in zip(cert.barriers, again.barriers):
        assert a.allclose(b, atol=0.0, rtol=1e-15)


def test_time_invariant_rejects_moving_obstacles():
    with pytest.raises(ValueError):
        synthesize(builtin_system("unstable1d-obstacle", horizon=5), "ti", 4)


def test_oversized_program_is_refused():
    cert, bound = synthesize(builtin_system("vanderpol-2obs", horizon=5), "meta", 4)
    assert cert.status != OPTIMAL
    assert "Schur" in cert.stats.message
    assert bound.lower_bound == 0.0


def test_unknown_mode():
    with pytest.raises(ValueError):
        synthesize(builtin_system("unstable1d"), "sideways", 4)


def test_empty_unsafe_set_gives_bound_one():
    from sbcert.polyalg import GaussianNoise
    from sbcert.sos import SemiAlgebraicSet
    from sbcert.systems import SafetyInstance, StochasticSystem

    sysm = StochasticSystem((parse_polynomial("1.05*x1 + w1"),), GaussianNoise((0.01,)),
                            SemiAlgebraicSet((), ("x1",)), SemiAlgebraicSet.box(["x1"], [-0.1], [0.1]))
    inst = SafetyInstance(sysm, (), 4, "free")
    for mode in (TIME_INVARIANT, TIME_VARYING):
        cert, bound = synthesize(inst, mode, 4)
        assert cert.stats.status == OPTIMAL
        assert bound.lower_bound >= 1.0 - 1e-6
        assert cert.alpha <= 1e-6 and sum(cert.betas) <= 1e-6


def test_solver_residual_absorbed_into_constants():
    # degree 6 leaves equality residuals near 1e-6 in original units
    inst = builtin_system("vanderpol", horizon=5)
    cert, _ = synthesize(inst, TIME_INVARIANT, 6)
    assert cert.stats.status == OPTIMAL
    assert check_certificate(inst, cert, samples=100_000).worst <= 1e-6
