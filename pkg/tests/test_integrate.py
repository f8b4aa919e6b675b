import math

import numpy as np
import pytest

from pvsurf.dynamics import (Background, GrowthRate, LinearShear, PointVortexSystem, RigidRotation, Strain,
                             ZeroBackground, merger_threshold)
from pvsurf.geometry import FlatTorus, Plane, Sphere
from pvsurf.integrate import (IntegrationError, IntegratorConfig, MaxStepsExceeded, RunSpec, integrate,
                              summarize, sweep)

TWO_PI = 2 * math.pi
PAIR = np.array([[-0.5, 0.0], [0.5, 0.0]])


def pair_system(**kw):
    return PointVortexSystem(Plane(), [TWO_PI, TWO_PI], **kw)


# -- exact and closed-form cases -----------------------------------------------------

@pytest.mark.parametrize("scheme", ["dopri45", "rk4", "midpoint"])
@pytest.mark.parametrize("surface,q0", [
    (Plane(), [[0.1, 0.2], [1.0, -0.3]]),
    (Sphere(1.0), [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]),
    (FlatTorus((1.0, 2.0)), [[0.1, 0.2], [0.7, 1.5]]),
])
def test_frozen_system_is_exactly_constant(scheme, surface, q0):
    sys_ = PointVortexSystem(surface, [1.0, -2.0], ZeroBackground(), GrowthRate(0.0, 0.0))
    cfg = IntegratorConfig(scheme=scheme, dt=None if scheme == "dopri45" else 0.5, sample_interval=1.0)
    traj = integrate(sys_, q0, 0.0, 10.0, cfg)
    assert traj.completed and traj.times[-1] == 10.0
    for q in traj.positions:
        np.testing.assert_array_equal(q, np.asarray(q0, float))
    for m in traj.moments():
        np.testing.assert_array_equal(m.linear, traj.moments()[0].linear)


def test_identical_pair_rotation():
    traj = integrate(pair_system(), PAIR, 0.0, math.pi, IntegratorConfig(sample_interval=math.pi / 40))
    sep = traj.min_separation()
    assert np.max(np.abs(sep - 1.0)) < 1e-9
    mid = traj.positions.mean(axis=1)
    assert np.max(np.abs(mid)) < 1e-9
    # angular frequency Gamma / (pi xi^2) = 2 from the unwrapped angle of the separation vector
    d = traj.positions[:, 1] - traj.positions[:, 0]
    ang = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    omega = np.polyfit(traj.times, ang, 1)[0]
    assert omega == pytest.approx(2.0, rel=1e-6)
    assert np.max(np.abs(traj.final - PAIR)) < 1e-6


def test_dipole_translation():
    q0 = np.array([[0.0, 0.0], [1.0, 0.0]])
    sys_ = PointVortexSystem(Plane(), [TWO_PI, -TWO_PI])
    traj = integrate(sys_, q0, 0.0, 5.0, IntegratorConfig(sample_interval=0.5))
    shift = traj.positions - q0
    np.testing.assert_allclose(shift[:, 0], shift[:, 1], atol=1e-12)
    speed = np.linalg.norm(shift[-1, 0]) / 5.0
    assert speed == pytest.approx(1.0, rel=1e-6)
    assert np.max(np.abs(traj.min_separation() - 1.0)) < 1e-9


def _rk4_endpoint_errors(ns, T=math.pi / 2):
    # the pair swaps places after a quarter turn of the vector field period pi
    errs = []
    for n in ns:
        traj = integrate(pair_system(), PAIR, 0.0, T, IntegratorConfig(scheme="rk4", dt=T / n))
        errs.append(float(np.max(np.abs(traj.final - PAIR[::-1]))))
    return np.array(errs)


def test_rk4_order():
    ns = np.array([8, 16, 32, 64])
    errs = _rk4_endpoint_errors(ns)
    slope = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert 3.9 <= slope <= 4.1
    assert np.all(errs[:-1] / errs[1:] > 14.0)


def test_time_rescaling():
    s = Sphere(1.0)
    rng = np.random.default_rng(3)
    q0 = s.random_points(rng, 3)
    gam = [1.0, 2.0, -1.5]
    base = PointVortexSystem(s, gam, beta=GrowthRate(0.0, 1.0))
    ref = integrate(base, q0, 0.0, 5.0, IntegratorConfig(rtol=1e-12, atol=1e-12, sample_interval=0.25))
    for bw in (0.5, 2.0):
        sys_ = PointVortexSystem(s, gam, beta=GrowthRate(0.0, bw))
        traj = integrate(sys_, q0, 0.0, 5.0 / bw, IntegratorConfig(rtol=1e-12, atol=1e-12,
                                                                      sample_interval=0.25 / bw))
        np.testing.assert_allclose(traj.times * bw, ref.times, rtol=1e-12)
        assert np.max(np.abs(traj.positions - ref.positions)) < 1e-8


# -- conservation ------------------------------------------------------------------

def test_shear_pair_hamiltonian_drift():
    sys_ = pair_system(background=LinearShear(-0.5))
    traj = integrate(sys_, PAIR, 0.0, 20.0, IntegratorConfig(sample_interval=0.1))
    assert traj.hamiltonian_drift() < 1e-8


def test_plane_impulses_conserved():
    rng = np.random.default_rng(4)
    q0 = rng.uniform(-1, 1, (4, 2))
    sys_ = PointVortexSystem(Plane(), [1.0, 2.0, -0.7, 1.3])
    traj = integrate(sys_, q0, 0.0, 5.0, IntegratorConfig(sample_interval=0.1))
    m = traj.moments()
    assert max(np.max(np.abs(x.linear - m[0].linear)) for x in m) < 1e-8
    assert max(abs(x.angular - m[0].angular) for x in m) < 1e-8
    assert traj.hamiltonian_drift() < 1e-8


def test_sphere_moment_and_manifold():
    s = Sphere(1.0)
    rng = np.random.default_rng(5)
    q0 = s.random_points(rng, 4)
    sys_ = PointVortexSystem(s, [1.0, 2.0, -0.7, 1.3])
    traj = integrate(sys_, q0, 0.0, 10.0, IntegratorConfig(sample_interval=0.1))
    m = traj.moments()
    assert max(np.linalg.norm(x.linear - m[0].linear) for x in m) < 1e-8
    assert np.max(np.abs(np.linalg.norm(traj.positions, axis=-1) - 1.0)) < 1e-10
    assert traj.hamiltonian_drift() < 1e-8


def test_rigid_rotation_sphere_hamiltonian():
    s = Sphere(1.0)
    rng = np.random.default_rng(6)
    sys_ = PointVortexSystem(s, [1.0, -2.0, 0.5], RigidRotation(0.7))
    traj = integrate(sys_, s.random_points(rng, 3), 0.0, 10.0, IntegratorConfig(sample_interval=0.1))
    assert traj.hamiltonian_drift() < 1e-8
    assert np.max(np.abs(np.linalg.norm(traj.positions, axis=-1) - 1.0)) < 1e-10


def test_torus_hamiltonian():
    s = FlatTorus((1.0, 1.5))
    sys_ = PointVortexSystem(s, [1.0, 1.0, -0.5])
    q0 = np.array([[0.2, 0.3], [0.6, 0.4], [0.5, 1.2]])
    traj = integrate(sys_, q0, 0.0, 5.0, IntegratorConfig(sample_interval=0.1))
    assert traj.hamiltonian_drift() < 1e-8


@pytest.mark.slow
def test_midpoint_energy_has_no_secular_drift():
    sys_ = pair_system(background=LinearShear(-0.5))
    n = 100_000
    q0 = PAIR + [0.0, 0.5]  # H0 = pi / 4
    traj = integrate(sys_, q0, 0.0, 1000.0, IntegratorConfig(scheme="midpoint", dt=0.01, sample_interval=10.0))
    h = traj.hamiltonian()
    dev = np.abs(h - h[0]) / abs(h[0])
    assert traj.n_steps == n
    # bounded oscillation: the late error is no larger than the early one
    assert dev.max() < 1e-3
    assert dev[len(dev) // 2:].max() < 2 * dev[: len(dev) // 2].max() + 1e-12


# -- merger criterion --------------------------------------------------------------

@pytest.mark.parametrize("beta", [GrowthRate(1.0, 1.0), GrowthRate(2.0, 0.5)])
def test_merger_sign_criterion(beta):
    for c in (-1.0, -0.5, -0.2, 0.2, 0.5, 1.0):
        sys_ = pair_system(background=LinearShear(c), beta=beta)
        traj = integrate(sys_, PAIR, 0.0, 20.0, IntegratorConfig(sample_interval=0.05))
        mu = merger_threshold(c, TWO_PI, 1.0, beta)
        if mu < 0:
            assert traj.min_separation().min() < 1.0 - 1e-3
        else:
            assert traj.max_separation().max() > 1.0 + 1e-3
            assert traj.min_separation().min() >= 1.0 - 1e-9


# -- events and failures -----------------------------------------------------------

@pytest.mark.parametrize("scheme", ["dopri45", "rk4"])
def test_close_approach_event(scheme):
    # strain contracts y as exp(-t): the 0.002 gap reaches 1e-4 at t = log 20
    sys_ = PointVortexSystem(Plane(), [1.0, 1.0], Strain(1.0), GrowthRate(1.0, 0.0))
    q0 = [[1.0, 0.001], [1.0, -0.001]]
    cfg = IntegratorConfig(scheme=scheme, dt=None if scheme == "dopri45" else 0.01, close_approach=1e-4,
                           sample_interval=0.5)
    traj = integrate(sys_, q0, 0.0, 10.0, cfg)
    assert not traj.completed
    (ev,) = traj.events
    assert ev.pair == (0, 1) and ev.threshold == 1e-4
    assert ev.time == pytest.approx(math.log(20.0), abs=1e-7)
    assert traj.times[-1] <= ev.time and ev.time - traj.times[-1] < 1e-8
    assert traj.min_separation()[-1] > 1e-4
    assert ev.as_dict()["type"] == "close_approach"


def test_max_steps_keeps_partial_trajectory():
    cfg = IntegratorConfig(scheme="rk4", dt=0.01, max_steps=50, sample_interval=0.1)
    with pytest.raises(MaxStepsExceeded) as info:
        integrate(pair_system(), PAIR, 0.0, 10.0, cfg)
    err = info.value
    assert err.partial is not None and err.partial.times[-1] == pytest.approx(0.5)
    assert err.time == pytest.approx(0.5)
    assert "positions=" in str(err)


class _Blowup(Background):
    label = "blowup"

    def velocity(self, t, q):
        v = np.zeros(np.shape(q))
        if t > 0.3:
            v[...] = np.nan
        return v


@pytest.mark.parametrize("scheme", ["dopri45", "rk4"])
def test_nan_is_a_hard_failure(scheme):
    sys_ = PointVortexSystem(Plane(), [1.0, 1.0], _Blowup(), GrowthRate(1.0, 0.0))
    cfg = IntegratorConfig(scheme=scheme, dt=None if scheme == "dopri45" else 0.1)
    with pytest.raises(IntegrationError) as info:
        integrate(sys_, PAIR, 0.0, 1.0, cfg)
    assert np.all(np.isfinite(info.value.positions))
    assert info.value.time <= 0.4


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="euler")
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="rk4")
    with pytest.raises(ValueError):
        IntegratorConfig(dt=-1.0)
    with pytest.raises(ValueError):
        IntegratorConfig(rtol=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(close_approach=-1.0)
    with pytest.raises(ValueError):
        integrate(pair_system(), PAIR, 1.0, 1.0)


# -- determinism and sweeps ---------------------------------------------------------

def test_serial_runs_are_bit_identical():
    a = integrate(pair_system(background=LinearShear(0.3)), PAIR, 0.0, 3.0, IntegratorConfig(sample_interval=0.1))
    b = integrate(pair_system(background=LinearShear(0.3)), PAIR, 0.0, 3.0, IntegratorConfig(sample_interval=0.1))
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.times, b.times)


def _specs():
    cfg = IntegratorConfig(sample_interval=0.5)
    return [RunSpec(pair_system(background=LinearShear(c)), PAIR, 0.0, 5.0, cfg) for c in (-1.0, -0.2, 0.5)]


def test_sweep_worker_count_independent():
    specs = _specs()
    params = [{"background.rate": c} for c in (-1.0, -0.2, 0.5)]
    one = sweep(specs, params, workers=1)
    two = sweep(specs, params, workers=2)
    assert one.summary == two.summary
    for x, y in zip(one.trajectories, two.trajectories):
        assert np.array_equal(x.positions, y.positions)
    assert [r["background.rate"] for r in one.summary] == [-1.0, -0.2, 0.5]
    assert [r["mu_prime"] < 0 for r in one.summary] == [True, True, False]


def test_sweep_empty_and_single():
    assert sweep([], []).summary == []
    spec = _specs()[0]
    res = sweep([spec])
    direct = integrate(spec.system, spec.positions, spec.t0, spec.t1, spec.config)
    assert np.array_equal(res.trajectories[0].positions, direct.positions)
    assert res.summary[0] == summarize({"index": 0}, spec, direct)


def test_sweep_records_failures():
    bad = RunSpec(pair_system(), PAIR, 0.0, 10.0, IntegratorConfig(scheme="rk4", dt=0.01, max_steps=3))
    res = sweep([bad, _specs()[0]])
    assert res.trajectories[0] is None and "MaxStepsExceeded" in res.errors[0]
    assert res.trajectories[1] is not None and res.errors[1] is None
