import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pvsurf.currents import (CurrentDensity, EpsilonSchedule, FlowSnapshot, VortexPath, chi_circle,
                             chi_circle_sequence, chi_direct, circle_integral, d_chi, dump_report, localized_residuals,
                             loc_eval, loc_sequence, random_smooth_field, weak_residual)
from pvsurf.dynamics import GrowthRate, LinearShear, PointVortexSystem, RigidRotation, ZeroBackground
from pvsurf.forms import TestForm, random_test_form
from pvsurf.geometry import FlatTorus, Plane, Sphere
from pvsurf.integrate import IntegratorConfig, integrate
from pvsurf.quadrature import integrate_disk, loglog_slope

PLANE, SPHERE, TORUS = Plane(), Sphere(1.0), FlatTorus((1.0, 1.3))
SURFACES = [PLANE, SPHERE, TORUS]
TWO_PI = 2 * math.pi


def ids(s):
    return s.kind


def near(s, p, rng, dist):
    d = s.random_tangents(rng, p)
    return s.exp(p, d / np.linalg.norm(d), dist)


# -- chi functional -------------------------------------------------------------

def test_chi_direct_examples():
    phi = TestForm(PLANE, np.zeros(2), 0.5, degree=1, covector=[1.0, 0.0])
    assert chi_direct(lambda x: np.broadcast_to([1.0, 0.0], np.shape(x)), np.zeros(2), phi) == 1.0
    assert chi_direct(lambda x: np.zeros(np.shape(x)), np.zeros(2), phi) == 0.0
    with pytest.raises(ValueError):
        chi_direct(lambda x: x, np.zeros(2), TestForm(PLANE, np.zeros(2), 0.5))


@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_chi_direct_bilinear(seed, a, b):
    rng = np.random.default_rng(seed)
    s = SPHERE
    v1, v2 = random_smooth_field(s, rng), random_smooth_field(s, rng)
    phi1 = random_test_form(s, rng, degree=1)
    p = near(s, phi1.center, rng, 0.3 * phi1.radius)
    phi2 = TestForm(s, phi1.center, phi1.radius, 1, phi1.amplitude, rng.normal(size=3))
    comb = lambda x: a * v1(x) + b * v2(x)
    lhs = chi_direct(comb, p, phi1)
    assert lhs == pytest.approx(a * chi_direct(v1, p, phi1) + b * chi_direct(v2, p, phi1), abs=1e-12)
    phisum = TestForm(s, phi1.center, phi1.radius, 1, phi1.amplitude, phi1.covector + phi2.covector)
    assert chi_direct(v1, p, phisum) == pytest.approx(chi_direct(v1, p, phi1) + chi_direct(v1, p, phi2), abs=1e-12)


@pytest.mark.parametrize("s", SURFACES, ids=ids)
def test_chi_circle_matches_direct(s, rng):
    for _ in range(20):
        v = random_smooth_field(s, rng)
        phi = random_test_form(s, rng, degree=1)
        p = near(s, phi.center, rng, rng.uniform(0, 0.8) * phi.radius)
        lim = chi_circle(v, p, phi)
        assert abs(lim.value - chi_direct(v, p, phi)) < 1e-6


def test_chi_circle_zero_field():
    phi = TestForm(SPHERE, [0, 0, 1.0], 0.5, degree=1, covector=[1.0, 2.0, 0.0])
    seq = chi_circle_sequence(lambda x: np.zeros(np.shape(x)), np.array([0.1, 0.0, 1.0]) / math.hypot(0.1, 1),
                              phi, EpsilonSchedule().radii)
    assert np.all(seq == 0.0)


@pytest.mark.parametrize("s", SURFACES, ids=ids)
def test_chi_circle_defect_is_second_order(s, rng):
    """The circle mean is even in the radius, so the fixed-radius defect falls like eps^2."""
    v = random_smooth_field(s, rng)
    phi = random_test_form(s, rng, degree=1)
    p = near(s, phi.center, rng, 0.3 * phi.radius)
    radii = EpsilonSchedule(eps0=0.05, count=6).radii
    err = np.abs(chi_circle_sequence(v, p, phi, radii) - chi_direct(v, p, phi))
    assert loglog_slope(radii, err) == pytest.approx(2.0, abs=0.15)


def test_circle_integral_length_and_failure():
    one = lambda x, tan, rad: np.ones(len(x))
    assert circle_integral(PLANE, np.zeros(2), 0.3, one) == pytest.approx(2 * math.pi * 0.3, rel=1e-14)
    assert circle_integral(SPHERE, np.array([0, 0, 1.0]), 1.0, one) == pytest.approx(2 * math.pi * math.sin(1.0),
                                                                                    rel=1e-14)
    from pvsurf.currents import ExtrapolationError
    rough = lambda x, tan, rad: np.sign(np.sin(7.3 * np.arctan2(x[:, 1], x[:, 0])))
    with pytest.raises(ExtrapolationError):
        circle_integral(PLANE, np.zeros(2), 1.0, rough, n_max=1024)


def test_d_chi_is_the_differential(rng):
    phi = TestForm(SPHERE, [0.0, 0.3, 1.0], 0.7, amplitude=1.4)
    p = near(SPHERE, phi.center, rng, 0.3)
    w = SPHERE.random_tangents(rng, p)
    h = 1e-6
    fd = (phi.value(SPHERE.exp(p, w, h)) - phi.value(SPHERE.exp(p, w, -h))) / (2 * h)
    assert d_chi(p, w, phi) == pytest.approx(float(fd), rel=1e-8)


def test_epsilon_schedule_validation():
    assert np.all(np.diff(EpsilonSchedule().radii) < 0)
    for bad in (dict(eps0=0.0), dict(ratio=1.0), dict(count=2), dict(eps0=1e-7, count=10)):
        with pytest.raises(ValueError):
            EpsilonSchedule(**bad)


# -- localizing operator --------------------------------------------------------------

def _vortex_snapshot(s, rng, n, bg=ZeroBackground()):
    sys_ = PointVortexSystem(s, rng.choice([-1, 1], n) * rng.uniform(0.5, 2.0, n), bg)
    return sys_


@pytest.mark.parametrize("s", SURFACES, ids=ids)
def test_loc_u_is_the_vorticity(s, rng):
    """Loc u [phi] = sum Gamma_n phi(q_n) + c int phi, with c the uniform compensation."""
    for _ in range(3):
        phi = random_test_form(s, rng, radius_range=(0.3, 0.6))
        q = np.stack([near(s, phi.center, rng, rng.uniform(0.05, 0.6) * phi.radius) for _ in range(2)]
                     + [near(s, phi.center, rng, 1.3 * phi.radius)])
        sys_ = PointVortexSystem(s, rng.uniform(0.5, 2.0, 3) * [1, -1, 1])
        snap = FlowSnapshot(sys_, 0.0, q)
        want = float(np.sum(sys_.strengths * phi.value(q)) + snap.c * phi.integral())
        got = loc_eval(snap.loc_u(), phi, EpsilonSchedule(eps0=0.1 * phi.radius))
        assert got.value == pytest.approx(want, abs=1e-8)
        if isinstance(s, Plane):
            assert snap.c == 0.0
        else:
            assert snap.c == pytest.approx(-np.sum(sys_.strengths) / s.area)


@pytest.mark.parametrize("s", SURFACES, ids=ids)
def test_loc_star_u_vanishes(s, rng):
    phi = random_test_form(s, rng, radius_range=(0.3, 0.6))
    q = np.stack([near(s, phi.center, rng, 0.2 * phi.radius), near(s, phi.center, rng, 0.7 * phi.radius)])
    sys_ = PointVortexSystem(s, [1.5, -0.8])
    snap = FlowSnapshot(sys_, 0.0, q)
    star_u = CurrentDensity(s, lambda x: s.rotate_j(x, snap.u(x)), q)
    assert abs(loc_eval(star_u, phi).value) < 1e-8


def test_loc_omega_star_u_bound(rng):
    """Constant background vorticity times *u: bounded by sup|omega_X| times |Loc *u|, here 0."""
    bg = LinearShear(0.8)
    phi = TestForm(PLANE, [0.1, 0.2], 0.5)
    q = np.array([[0.2, 0.1], [-0.1, 0.4]])
    snap = FlowSnapshot(PointVortexSystem(PLANE, [1.0, 2.0], bg), 0.0, q)
    T = CurrentDensity(PLANE, lambda x: bg.vorticity(0.0, x)[..., None] * PLANE.rotate_j(x, snap.u(x)), q)
    assert abs(loc_eval(T, phi).value) < 1e-8 * 0.8


@pytest.mark.parametrize("s", SURFACES, ids=ids)
def test_loc_of_smooth_currents(s, rng):
    """Closed smooth densities give 0; J grad f gives int phi lap f = int f lap phi."""
    phi = random_test_form(s, rng, radius_range=(0.3, 0.6))
    if isinstance(s, Sphere):
        a = rng.normal(size=3)
        f = lambda x: np.sin(x @ a)
        grad_f = lambda x: s.to_tangent(x, np.cos(x @ a)[..., None] * a) / s.radius
        # zonal Laplacian of F(a.x): F'' (|a|^2 - (a.x)^2) - 2 (a.x) F'
        lap_f = lambda x: (-np.sin(x @ a) * (a @ a - (x @ a) ** 2) - 2 * (x @ a) * np.cos(x @ a)) / s.radius**2
    else:
        k = TWO_PI / np.asarray(getattr(s, "periods", (2.0, 2.0)))
        f = lambda x: np.sin(k[0] * x[..., 0]) * np.cos(k[1] * x[..., 1])
        grad_f = lambda x: np.stack([k[0] * np.cos(k[0] * x[..., 0]) * np.cos(k[1] * x[..., 1]),
                                     -k[1] * np.sin(k[0] * x[..., 0]) * np.sin(k[1] * x[..., 1])], -1)
        lap_f = lambda x: -(k @ k) * f(x)
    closed = CurrentDensity(s, grad_f, np.zeros((0, s.dim)))
    assert abs(loc_eval(closed, phi).value) < 1e-12

    rot = CurrentDensity(s, lambda x: s.rotate_j(x, grad_f(x)), np.zeros((0, s.dim)),
                         d_density=lap_f)
    want = integrate_disk(s, phi.center, phi.radius, lambda x: f(x) * phi.laplacian(x), n_r=64, n_theta=128)
    assert loc_eval(rot, phi).value == pytest.approx(want, abs=1e-8)


def test_potential_and_field_forms_agree(rng):
    """For T = dF the potential route -sum oint F dphi matches the field route with dT = 0."""
    s = PLANE
    phi = TestForm(s, [0.0, 0.0], 0.6)
    q = np.array([[0.1, 0.05]])
    gam = 1.3
    # F = Gamma * G(q, x), dF has the same circle structure as a vortex velocity, dual field grad F
    F = lambda x: -gam / TWO_PI * np.log(np.linalg.norm(x - q[0], axis=-1))
    grad_F = lambda x: -gam / TWO_PI * (x - q[0]) / np.sum((x - q[0]) ** 2, -1)[..., None]
    radii = EpsilonSchedule().radii
    a = loc_sequence(CurrentDensity(s, None, q, potential=F), phi, radii)
    b = loc_sequence(CurrentDensity(s, grad_F, q), phi, radii)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_current_density_needs_something():
    with pytest.raises(ValueError):
        CurrentDensity(PLANE, None, np.zeros((0, 2)))
    with pytest.raises(ValueError):
        loc_sequence(CurrentDensity(PLANE, lambda x: x, np.zeros((0, 2))),
                     TestForm(PLANE, [0, 0], 0.5, degree=1, covector=[1, 0]), [0.1])


# -- identities along trajectories ---------------------------------------------------

SHEAR = PointVortexSystem(PLANE, [TWO_PI, TWO_PI], LinearShear(-0.5))


@pytest.fixture(scope="module")
def shear_traj():
    return integrate(SHEAR, [[-0.5, 0.0], [0.5, 0.0]], 0.0, 1.0, IntegratorConfig(sample_interval=0.5))


def test_lemma_plane_shear(shear_traj):
    q = shear_traj.positions[1]
    phi = TestForm(PLANE, q[0] + [0.05, -0.03], 0.4, amplitude=1.3)
    rep = localized_residuals(shear_traj, phi, t=0.5)
    assert rep.failed() == []
    assert max(rep.r1, rep.r2, rep.r3) < 1e-6
    assert abs(rep.rhs1) > 0.1  # the identity is not trivially 0 = 0
    d = rep.as_dict()
    assert d["schema"] == "pvsurf.verify/1" and set(d["residuals"]) == {"r1", "r2", "r3"}
    w = weak_residual(shear_traj, phi, t=0.5)
    assert w.passed and w.residual < 1e-6


def test_lemma_both_vortices_in_support(shear_traj):
    phi = TestForm(PLANE, [0.0, 0.0], 0.9)
    rep = localized_residuals(shear_traj, phi, t=0.5)
    assert max(rep.r1, rep.r2, rep.r3) < 1e-6


def test_lemma_frozen_system():
    sys_ = PointVortexSystem(PLANE, [1.0, -2.0], LinearShear(0.4), GrowthRate(0.0, 0.0))
    traj = integrate(sys_, [[0.0, 0.0], [0.3, 0.1]], 0.0, 1.0, IntegratorConfig(scheme="rk4", dt=0.1,
                                                                                 sample_interval=0.5))
    phi = TestForm(PLANE, [0.1, 0.0], 0.5)
    rep = localized_residuals(traj, phi, t=0.5)
    assert rep.rhs1 == 0.0 and abs(rep.dt_loc_u.value) < 1e-8 and rep.r1 < 1e-8


@pytest.mark.parametrize("case", ["pole", "centered"])
def test_lemma_sphere_rotation(case):
    s = Sphere(1.0)
    sys_ = PointVortexSystem(s, [1.5], RigidRotation(0.7))
    q0 = [[0.0, 0.0, 1.0]] if case == "pole" else [[math.sqrt(0.5), 0.0, math.sqrt(0.5)]]
    path = VortexPath(sys_, 0.0, np.array(q0))
    center = [0.3, 0.1, 1.0] if case == "pole" else q0[0]
    phi = TestForm(s, center, 0.6)
    rep = localized_residuals(path, phi)
    assert max(rep.r1, rep.r2, rep.r3) < 1e-4


def test_lemma_sphere_pair_and_torus():
    s = Sphere(1.0)
    sys_ = PointVortexSystem(s, [1.0, 2.0])
    q0 = s.project(np.array([[0.1, 0.0, 1.0], [0.0, 0.3, 1.0]]))
    phi = TestForm(s, [0.05, 0.1, 1.0], 0.6)
    rep = localized_residuals(VortexPath(sys_, 0.0, q0), phi)
    assert abs(rep.rhs1) > 1e-2 and max(rep.r1, rep.r2, rep.r3) < 1e-6

    t = FlatTorus((1.0, 1.0))
    sys_ = PointVortexSystem(t, [1.0, -0.5, 2.0])
    q0 = np.array([[0.4, 0.5], [0.6, 0.45], [0.1, 0.9]])
    phi = TestForm(t, [0.5, 0.5], 0.3)
    rep = localized_residuals(VortexPath(sys_, 0.0, q0), phi)
    assert abs(rep.rhs1) > 1e-2 and max(rep.r1, rep.r2, rep.r3) < 1e-6


def test_middle_bracket_with_varying_background_vorticity():
    """With non-constant omega_X the middle bracket localizes to int phi u . grad omega_X, not 0.

    Oracle: integrating by parts moves the derivative onto phi, leaving the
    log-singular integrand -psi J grad omega_X . grad phi.
    """
    s = Sphere(1.0)
    bg = RigidRotation(0.7)
    sys_ = PointVortexSystem(s, [1.5], bg)
    q = np.array([[math.sqrt(0.5), 0.0, math.sqrt(0.5)]])
    phi = TestForm(s, s.project(np.array([0.9, 0.25, 0.6])), 0.6)
    rep = localized_residuals(VortexPath(sys_, 0.0, q), phi)
    snap = FlowSnapshot(sys_, 0.0, q)
    k = sys_.kernel

    def psi(x):
        return 1.5 * k.value(np.broadcast_to(q[0], x.shape), x)

    def integrand(x):
        return -psi(x) * s.inner(x, s.rotate_j(x, bg.vorticity_grad(0.0, x)), phi.gradient(x))

    oracle = integrate_disk(s, phi.center, phi.radius, integrand, singular=q[0], n_r=96, n_theta=256)
    assert abs(oracle) > 1e-2
    assert rep.loc_middle.value == pytest.approx(oracle, abs=1e-6)
    assert rep.r1 < 1e-6 and rep.r3 < 1e-6
    assert rep.failed() == ["r2"]
    assert snap.c == pytest.approx(-1.5 / s.area)


def test_weak_residual_without_vortices():
    s = Sphere(1.0)
    sys_ = PointVortexSystem(s, np.zeros(0), RigidRotation(0.9))
    path = VortexPath(sys_, 0.0, np.zeros((0, 3)))
    w = weak_residual(path, TestForm(s, [0.2, 0.1, 1.0], 0.8))
    assert w.residual < 1e-8


def test_weak_residual_detects_perturbed_motion(shear_traj, tmp_path):
    q = shear_traj.positions[1]
    phi = TestForm(PLANE, q[0] + [0.05, -0.03], 0.4, amplitude=1.3)
    true = weak_residual(shear_traj, phi, t=0.5)
    from dataclasses import replace
    fake = VortexPath(replace(SHEAR, speed=1.5), 0.5, q)
    bad = weak_residual(fake, phi)
    assert bad.residual > 10 * max(true.residual, 1e-4) and not bad.passed
    out = tmp_path / "weak.json"
    dump_report(bad, str(out))
    data = json.loads(out.read_text())
    assert data["check"] == "weak" and data["passed"] is False and len(data["combined"]["sequence"]) == 6


def test_path_requires_sample_time(shear_traj):
    with pytest.raises(ValueError, match="sample time"):
        localized_residuals(shear_traj, TestForm(PLANE, [0, 0], 0.5), t=0.3)
