"""Numerical de Rham currents for point vortex flows.

1-form densities are represented by their dual vector fields, so the Hodge
star acts as ``J``: ``(*a)^sharp = J a^sharp``. For a 0-form test form ``phi``
and a 1-form density ``T`` that is smooth off a finite set ``K``, the
localizing operator is evaluated as the shrinking-circle limit

    Loc T[phi] = lim_{eps -> 0} sum_{q in K} oint_{dB_eps(q)} phi T  +  int_{M - B_eps(K)} phi dT

with counterclockwise circles. For ``T = dF`` this becomes
``-sum oint F dphi``. The point-evaluation current is ``chi_p v[phi] = phi_p(v_p)``
and its derivative along a path acts as ``d chi_p w [phi] = d phi_p (w)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .dynamics import (Background, GrowthRate, PointVortexSystem, ZeroBackground, induced_velocity,
                       regularized_velocities)
from .forms import TestForm, random_test_form
from .geometry import FlatTorus, Plane, Sphere, Surface
from .greens import GreenKernel
from .integrate import Trajectory, _rk4_step
from .quadrature import integrate_disk, integrate_punctured, richardson, trapezoid_angles

__all__ = [
    "TestForm", "random_test_form", "EpsilonSchedule", "CurrentDensity", "LimitResult",
    "chi_direct", "chi_circle", "chi_circle_sequence", "d_chi", "circle_integral", "loc_sequence",
    "loc_eval", "VortexPath", "FlowSnapshot", "LocalizedReport", "WeakReport",
    "localized_residuals", "weak_residual", "TrigField", "TangentLinearField", "random_smooth_field",
]

REPORT_SCHEMA = "pvsurf.verify/1"


class ExtrapolationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EpsilonSchedule:
    """Radii ``eps0 * ratio**k`` for ``k < count``."""

    eps0: float = 0.032
    ratio: float = 0.5
    count: int = 6
    floor: float = 1e-8

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError("ratio must lie in (0, 1)")
        if self.count < 3:
            raise ValueError("an epsilon schedule needs at least 3 radii")
        if self.radii[-1] <= self.floor:
            raise ValueError(f"smallest radius {self.radii[-1]:.3g} below quadrature floor {self.floor:.3g}")

    @property
    def radii(self) -> np.ndarray:
        return self.eps0 * self.ratio ** np.arange(self.count)

    @property
    def eps_min(self) -> float:
        return float(self.radii[-1])


@dataclass(frozen=True)
class LimitResult:
    """An ``eps -> 0`` limit with its per-radius sequence."""

    value: float
    error: float
    radii: np.ndarray
    sequence: np.ndarray

    def as_dict(self) -> dict:
        return {"value": self.value, "error_estimate": self.error,
                "radii": [float(x) for x in self.radii], "sequence": [float(x) for x in self.sequence]}


def _limit(radii, seq) -> LimitResult:
    seq = np.asarray(seq, float)
    if not np.all(np.isfinite(seq)):
        raise ExtrapolationError(f"non-finite values in sequence {seq.tolist()}")
    ex = richardson(radii, seq)
    return LimitResult(ex.value, ex.error, np.asarray(radii, float), seq)


# -- circle quadrature ---------------------------------------------------------

def circle_integral(surface: Surface, p: np.ndarray, eps: float, g: Callable, n0: int = 128,
                    rtol: float = 1e-14, atol: float = 1e-15, n_max: int = 1 << 16) -> float:
    """``oint_{dB_eps(p)} g dl`` where ``g(points, tangent, radial)`` returns samples.

    Trapezoid rule with node doubling until two consecutive sums agree to
    ``rtol`` relative to the integral of ``|g|`` or to ``atol`` (integrands that
    vanish analytically leave only rounding noise).
    """
    prev = None
    n = n0
    while True:
        th = trapezoid_angles(n)
        pts, tan, rad, dl = surface.circle(p, eps, th)
        vals = g(pts, tan, rad) * dl
        val = float(np.sum(vals) * (2.0 * np.pi / n))
        scale = float(np.sum(np.abs(vals)) * (2.0 * np.pi / n))
        if prev is not None and abs(val - prev) <= rtol * scale + atol:
            return val
        if n >= n_max:
            raise ExtrapolationError(f"circle quadrature did not settle with {n} nodes at eps={eps:.3g}")
        prev = val
        n *= 2


# -- chi functional ---------------------------------------------------------------

def chi_direct(v: Callable, p: np.ndarray, phi: TestForm) -> float:
    """``phi_p(v_p)`` for a 1-form test form."""
    if phi.degree != 1:
        raise ValueError("chi acts on 1-form test forms")
    p = np.asarray(p, float)
    return float(phi.surface.inner(p, phi.value(p), v(p)))


def chi_circle_sequence(v: Callable, p: np.ndarray, phi: TestForm, radii: Sequence[float]) -> np.ndarray:
    """Mean-value approximations ``(1/pi) oint g(v, J grad log d) phi`` at each radius."""
    if phi.degree != 1:
        raise ValueError("chi acts on 1-form test forms")
    s = phi.surface
    p = np.asarray(p, float)
    out = []
    for eps in radii:
        # J grad log d = J(radial) / eps = tangent / eps on a geodesic circle
        def g(x, tan, rad):
            return s.inner(x, v(x), tan) * s.inner(x, phi.value(x), tan) / eps
        out.append(circle_integral(s, p, eps, g) / math.pi)
    return np.array(out)


def chi_circle(v: Callable, p: np.ndarray, phi: TestForm, sched: EpsilonSchedule = EpsilonSchedule()) -> LimitResult:
    return _limit(sched.radii, chi_circle_sequence(v, p, phi, sched.radii))


def d_chi(p: np.ndarray, w: np.ndarray, phi: TestForm) -> float:
    """``d chi_p w [phi] = d phi_p (w)`` for a 0-form test form."""
    p = np.asarray(p, float)
    return float(phi.surface.inner(p, phi.gradient(p), w))


# -- smooth test fields -------------------------------------------------------

@dataclass(frozen=True)
class TrigField:
    """Smooth field on the plane or a torus: ``a + sum_k b_k sin(2 pi k.x / L + c_k)``."""

    surface: Surface
    const: np.ndarray
    waves: np.ndarray  # (m, 2) integer wave numbers
    amps: np.ndarray  # (m, 2)
    phases: np.ndarray  # (m,)

    def __call__(self, x):
        x = np.asarray(x, float)
        L = np.asarray(self.surface.periods) if isinstance(self.surface, FlatTorus) else np.array([2.0, 2.0])
        arg = 2.0 * np.pi * (x / L) @ self.waves.T + self.phases
        return self.const + np.sin(arg) @ self.amps


@dataclass(frozen=True)
class TangentLinearField:
    """Tangential part of ``b + A x`` on a sphere (physical components)."""

    surface: Sphere
    const: np.ndarray
    matrix: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, float)
        return self.surface.to_tangent(x, self.const + x @ self.matrix.T)


def random_smooth_field(surface: Surface, rng: np.random.Generator, n_waves: int = 3):
    if isinstance(surface, Sphere):
        return TangentLinearField(surface, rng.normal(size=3), rng.normal(size=(3, 3)))
    waves = rng.integers(-2, 3, size=(n_waves, 2))
    return TrigField(surface, rng.normal(size=2), waves, rng.normal(size=(n_waves, 2)),
                     rng.uniform(0, 2 * np.pi, size=n_waves))


# -- currents with densities -------------------------------------------------------

@dataclass(frozen=True)
class CurrentDensity:
    """A 1-form density smooth off ``singular_support``.

    ``field`` gives the dual vector field. ``d_density`` gives ``dT / dA`` (None
    when T is closed off its singular support); ``d_constant`` is a shortcut for a
    constant ``dT / dA``. ``potential`` gives F with ``T = dF`` off the singular
    support (None when unknown).
    """

    surface: Surface
    field: Optional[Callable]
    singular_support: np.ndarray
    d_density: Optional[Callable] = None
    potential: Optional[Callable] = None
    d_constant: float = 0.0
    degree: int = 1

    def __post_init__(self):
        pts = np.asarray(self.singular_support, float).reshape(-1, self.surface.dim)
        object.__setattr__(self, "singular_support", pts)
        if self.field is None and self.potential is None:
            raise ValueError("a current density needs a field or a potential")


def loc_sequence(T: CurrentDensity, phi: TestForm, radii: Sequence[float],
                 bulk_n_r: int = 64, bulk_n_theta: int = 256) -> np.ndarray:
    if phi.degree != 0:
        raise ValueError("Loc of a 1-form density acts on 0-form test forms")
    s = T.surface
    K = T.singular_support
    out = []
    for eps in radii:
        total = 0.0
        for q in K:
            if float(s.distance(q, phi.center)) >= phi.radius + eps:
                continue  # circle misses the support
            if T.potential is not None:
                def g(x, tan, rad):
                    return -T.potential(x) * s.inner(x, phi.gradient(x), tan)
            else:
                def g(x, tan, rad):
                    return phi.value(x) * s.inner(x, T.field(x), tan)
            total += circle_integral(s, q, eps, g)
        if T.potential is None and T.d_constant != 0.0:
            # c * (int phi - sum over the excluded balls)
            holes = sum(integrate_disk(s, q, eps, phi.value) for q in K
                        if float(s.distance(q, phi.center)) < phi.radius + eps)
            total += T.d_constant * (phi.integral() - holes)
        if T.potential is None and T.d_density is not None:
            def bulk(x):
                return phi.value(x) * T.d_density(x)
            total += integrate_punctured(s, phi.center, phi.radius, bulk, K, eps,
                                         n_r=bulk_n_r, n_theta=bulk_n_theta)
        out.append(total)
    return np.array(out)


def loc_eval(T: CurrentDensity, phi: TestForm, sched: EpsilonSchedule = EpsilonSchedule()) -> LimitResult:
    return _limit(sched.radii, loc_sequence(T, phi, sched.radii))


# -- flow fields at an instant ------------------------------------------------------

class FlowSnapshot:
    """Vortex-induced velocity ``u``, background ``X`` and the derived densities at one time."""

    def __init__(self, dynamics: PointVortexSystem, t: float, positions: np.ndarray):
        self.dyn = dynamics
        self.s = dynamics.surface
        self.t = t
        self.q = np.asarray(positions, float).reshape(-1, self.s.dim)
        self.gam = dynamics.strengths if len(self.q) else np.zeros(0)
        self.c = dynamics.kernel.compensation(self.gam) if len(self.q) else 0.0

    def u(self, x):
        if len(self.q) == 0:
            return np.zeros(np.shape(x))
        return induced_velocity(x, self.q, self.gam, self.dyn.kernel)

    def X(self, x):
        return self.dyn.background.velocity(self.t, x)

    def loc_u(self) -> CurrentDensity:
        return CurrentDensity(self.s, self.u, self.q, d_constant=self.c)

    def middle(self) -> CurrentDensity:
        """``(omega_X + omega) *u + omega *X`` off the vortices, where ``omega = c``."""
        bg, t, c, s = self.dyn.background, self.t, self.c, self.s

        def fld(x):
            return (bg.vorticity(t, x) + c)[..., None] * s.rotate_j(x, self.u(x)) + c * s.rotate_j(x, self.X(x))

        def d(x):
            return s.inner(x, bg.vorticity_grad(t, x), self.u(x))

        return CurrentDensity(self.s, fld, self.q, d_density=d)

    def energy_flux(self) -> CurrentDensity:
        """``d g(2 beta_X X + beta_omega u, u)`` as an exact density."""
        beta, s = self.dyn.beta, self.s

        def F(x):
            u = self.u(x)
            return s.inner(x, 2.0 * beta.beta_x * self.X(x) + beta.beta_omega * u, u)

        return CurrentDensity(self.s, None, self.q, potential=F)

    def true_velocities(self) -> np.ndarray:
        """``beta_X X(q_n) + beta_omega v_n(q_n)`` from the unscaled equation."""
        if len(self.q) == 0:
            return np.zeros((0, self.s.dim))
        beta = self.dyn.beta
        out = beta.beta_x * self.X(self.q)
        if beta.beta_omega != 0.0:
            out = out + beta.beta_omega * regularized_velocities(self.dyn.state(self.q), self.dyn.kernel)
        return out


# -- paths ------------------------------------------------------------------------

class VortexPath:
    """Vortex positions near a time ``t``, re-integrated locally with RK4.

    ``system`` drives the motion (possibly with scaled speed); ``dynamics`` is the
    true point vortex equation used for the right-hand sides of the identities.
    """

    def __init__(self, system: PointVortexSystem, t: float, positions: np.ndarray, substeps: int = 4):
        self.system = system
        self.dynamics = replace(system, speed=1.0) if system.speed != 1.0 else system
        self.t = float(t)
        self.q = np.asarray(positions, float).reshape(-1, system.surface.dim)
        self.substeps = substeps

    @classmethod
    def from_trajectory(cls, traj: Trajectory, t: float, **kw) -> "VortexPath":
        idx = np.flatnonzero(np.isclose(traj.times, t, rtol=0.0, atol=1e-12 * max(1.0, abs(t))))
        if len(idx) == 0:
            raise ValueError(f"t={t} is not a sample time of the trajectory")
        i = int(idx[0])
        return cls(traj.system, float(traj.times[i]), traj.positions[i], **kw)

    def positions(self, dt: float) -> np.ndarray:
        if dt == 0.0 or len(self.q) == 0:
            return self.q
        s = self.system.surface
        q = self.q
        h = dt / self.substeps
        t = self.t
        for _ in range(self.substeps):
            q = _rk4_step(self.system.rhs, s, t, q, h)
            t += h
        return q

    def velocity(self) -> np.ndarray:
        if len(self.q) == 0:
            return np.zeros((0, self.system.surface.dim))
        return self.system.rhs(self.t, self.q)

    def snapshot(self, dt: float = 0.0) -> FlowSnapshot:
        return FlowSnapshot(self.dynamics, self.t + dt, self.positions(dt))


# -- localized identities ------------------------------------------------------------

@dataclass
class LocalizedReport:
    r1: float
    r2: float
    r3: float
    time: float
    dt_loc_u: LimitResult
    rhs1: float
    loc_middle: LimitResult
    loc_energy: LimitResult
    rhs3: float
    tol: float = 1e-4

    @property
    def passed(self) -> Dict[str, bool]:
        return {"r1": self.r1 < self.tol, "r2": self.r2 < self.tol, "r3": self.r3 < self.tol}

    def failed(self) -> List[str]:
        return [k for k, ok in self.passed.items() if not ok]

    def as_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA, "check": "lemma", "time": self.time, "tol": self.tol,
            "residuals": {"r1": self.r1, "r2": self.r2, "r3": self.r3},
            "passed": self.passed,
            "dt_loc_u": self.dt_loc_u.as_dict(), "sum_gamma_dchi_qdot": self.rhs1,
            "loc_middle": self.loc_middle.as_dict(),
            "loc_energy_flux": self.loc_energy.as_dict(), "sum_gamma_dchi_rhs": self.rhs3,
        }


@dataclass
class WeakReport:
    residual: float
    time: float
    combined: LimitResult
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.residual < self.tol

    def as_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "check": "weak", "time": self.time, "tol": self.tol,
                "residual": self.residual, "passed": self.passed, "combined": self.combined.as_dict()}


def _as_path(traj_or_path, t) -> VortexPath:
    if isinstance(traj_or_path, VortexPath):
        return traj_or_path
    return VortexPath.from_trajectory(traj_or_path, t)


def _dt_loc_u_sequence(path: VortexPath, phi: TestForm, radii, h) -> np.ndarray:
    plus = loc_sequence(path.snapshot(h).loc_u(), phi, radii)
    minus = loc_sequence(path.snapshot(-h).loc_u(), phi, radii)
    return (plus - minus) / (2.0 * h)


def _sum_dchi(q, gam, w, phi) -> float:
    return float(sum(g * d_chi(p, v, phi) for p, g, v in zip(q, gam, w)))


def localized_residuals(traj, phi: TestForm, sched: EpsilonSchedule = EpsilonSchedule(),
                      t: Optional[float] = None, h: Optional[float] = None, tol: float = 1e-4) -> LocalizedReport:
    """Residuals of the three localized identities at time ``t``.

    ``traj`` is a ``Trajectory`` (``t`` must be one of its sample times) or a
    ``VortexPath``. ``h`` is the central-difference step, by default ``eps_min**2``.
    """
    path = _as_path(traj, t)
    radii = sched.radii
    h = sched.eps_min**2 if h is None else h
    snap = path.snapshot()

    dt_loc = _limit(radii, _dt_loc_u_sequence(path, phi, radii, h))
    rhs1 = _sum_dchi(snap.q, snap.gam, path.velocity(), phi)
    mid = _limit(radii, loc_sequence(snap.middle(), phi, radii))
    en = _limit(radii, loc_sequence(snap.energy_flux(), phi, radii))
    rhs3 = _sum_dchi(snap.q, snap.gam, snap.true_velocities(), phi)
    return LocalizedReport(abs(dt_loc.value - rhs1), abs(mid.value), abs(en.value + rhs3), path.t,
                         dt_loc, rhs1, mid, en, rhs3, tol)


def weak_residual(traj, phi: TestForm, sched: EpsilonSchedule = EpsilonSchedule(),
                  t: Optional[float] = None, h: Optional[float] = None, tol: float = 1e-4) -> WeakReport:
    """``|d/dt Loc u + Loc{(omega_X + omega) *u + omega *X + d g(2 beta_X X + beta_omega u, u)}|``."""
    path = _as_path(traj, t)
    radii = sched.radii
    h = sched.eps_min**2 if h is None else h
    snap = path.snapshot()
    seq = (_dt_loc_u_sequence(path, phi, radii, h)
           + loc_sequence(snap.middle(), phi, radii)
           + loc_sequence(snap.energy_flux(), phi, radii))
    lim = _limit(radii, seq)
    return WeakReport(abs(lim.value), path.t, lim, tol)


def dump_report(report, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report.as_dict() if hasattr(report, "as_dict") else report, fh, indent=2)
