"""Point vortices moving in a background Euler flow.

The state is a set of positions ``q_n`` with strengths ``Gamma_n``. Each vortex
moves with ``beta_X X(q_n) + beta_omega v_n(q_n)``, where ``v_n`` is the
velocity induced by the other vortices plus the Robin self-drift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import FlatTorus, Plane, Sphere, Surface, pairwise_min_distance
from .greens import GreenKernel, green_kernel


class SingularConfigurationError(ValueError):
    """Two vortices closer than the collision threshold, or evaluation on a vortex."""


class NoHamiltonianError(ValueError):
    pass


def collision_threshold(surface: Surface, scale: float = 1e-6) -> float:
    return scale * surface.diameter


@dataclass(frozen=True, eq=False)
class VortexState:
    positions: np.ndarray
    strengths: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float, ndmin=2)
        gam = np.array(self.strengths, dtype=float, ndmin=1)
        if pos.shape[0] != gam.shape[0]:
            raise ValueError(f"{pos.shape[0]} positions but {gam.shape[0]} strengths")
        if gam.shape[0] < 1:
            raise ValueError("a vortex state needs at least one vortex")
        if np.any(gam == 0.0) or not np.all(np.isfinite(gam)):
            raise ValueError("vortex strengths must be finite and nonzero")
        pos.setflags(write=False)
        gam.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "strengths", gam)

    @property
    def n(self) -> int:
        return len(self.strengths)

    def validate(self, surface: Surface, threshold: Optional[float] = None) -> "VortexState":
        surface.validate_points(self.positions)
        thr = collision_threshold(surface) if threshold is None else threshold
        dmin, pair = pairwise_min_distance(surface, self.positions)
        if dmin <= thr:
            raise SingularConfigurationError(f"vortices {pair} at distance {dmin:.3g} <= {thr:.3g}")
        return self

    def with_positions(self, positions: np.ndarray) -> "VortexState":
        return VortexState(positions, self.strengths)


@dataclass(frozen=True)
class GrowthRate:
    beta_x: float = 1.0
    beta_omega: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.beta_x) and math.isfinite(self.beta_omega)):
            raise ValueError("growth rates must be finite")


# -- background fields ------------------------------------------------------
#
# Each background is a steady Euler flow: velocity X, stream function psi with
# X = -J grad psi (when a global one exists), pressure P with
# grad_X X = -grad P, and vorticity omega_X = curl X.

@dataclass(frozen=True)
class Background:
    label = "custom"
    autonomous = True
    has_stream = True

    def velocity(self, t: float, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def stream(self, t: float, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def pressure(self, t: float, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vorticity(self, t: float, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vorticity_grad(self, t: float, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroBackground(Background):
    label = "zero"

    def velocity(self, t, q):
        return np.zeros(np.shape(q))

    def stream(self, t, q):
        return np.zeros(np.shape(q)[:-1])

    pressure = stream
    vorticity = stream

    def vorticity_grad(self, t, q):
        return np.zeros(np.shape(q))

    def descriptor(self):
        return {"kind": "zero"}


@dataclass(frozen=True)
class LinearShear(Background):
    """``X = (c y, 0)`` on the plane; ``psi = c y^2 / 2``, ``P = 0``, ``omega_X = -c``."""

    rate: float = 1.0
    label = "linear_shear"

    def velocity(self, t, q):
        q = np.asarray(q, float)
        out = np.zeros_like(q)
        out[..., 0] = self.rate * q[..., 1]
        return out

    def stream(self, t, q):
        return 0.5 * self.rate * np.asarray(q, float)[..., 1] ** 2

    def pressure(self, t, q):
        return np.zeros(np.shape(q)[:-1])

    def vorticity(self, t, q):
        return np.full(np.shape(q)[:-1], -self.rate)

    def vorticity_grad(self, t, q):
        return np.zeros(np.shape(q))

    def descriptor(self):
        return {"kind": "linear_shear", "rate": self.rate}


@dataclass(frozen=True)
class RigidRotation(Background):
    """Solid-body rotation of a sphere of radius ``radius`` about the z axis at rate ``omega``."""

    omega: float = 1.0
    radius: float = 1.0
    label = "rigid_rotation"

    def velocity(self, t, q):
        q = np.asarray(q, float)
        ez = np.zeros_like(q)
        ez[..., 2] = 1.0
        return self.omega * self.radius * np.cross(ez, q)

    def stream(self, t, q):
        return self.omega * self.radius**2 * np.asarray(q, float)[..., 2]

    def pressure(self, t, q):
        z = np.asarray(q, float)[..., 2]
        return -0.5 * (self.omega * self.radius * z) ** 2

    def vorticity(self, t, q):
        return 2.0 * self.omega * np.asarray(q, float)[..., 2]

    def vorticity_grad(self, t, q):
        q = np.asarray(q, float)
        z = q[..., 2]
        out = -z[..., None] * q
        out[..., 2] += 1.0
        return 2.0 * self.omega * out / self.radius

    def descriptor(self):
        return {"kind": "rigid_rotation", "omega": self.omega}


@dataclass(frozen=True)
class UniformFlow(Background):
    """Constant irrotational flow ``(U, V)``. On a torus there is no global stream function."""

    u: float = 1.0
    v: float = 0.0
    periodic: bool = False
    label = "uniform"

    @property
    def has_stream(self):
        return not self.periodic

    def velocity(self, t, q):
        q = np.asarray(q, float)
        return np.broadcast_to(np.array([self.u, self.v]), q.shape).copy()

    def stream(self, t, q):
        if self.periodic:
            raise NoHamiltonianError("uniform flow on a torus has no global stream function")
        q = np.asarray(q, float)
        return self.u * q[..., 1] - self.v * q[..., 0]

    def pressure(self, t, q):
        return np.full(np.shape(q)[:-1], -0.5 * (self.u**2 + self.v**2))

    def vorticity(self, t, q):
        return np.zeros(np.shape(q)[:-1])

    def vorticity_grad(self, t, q):
        return np.zeros(np.shape(q))

    def descriptor(self):
        return {"kind": "uniform", "velocity": [self.u, self.v]}


@dataclass(frozen=True)
class Strain(Background):
    """Irrotational planar strain ``X = (a x, -a y)``, ``psi = a x y``, ``P = -|X|^2 / 2``."""

    rate: float = 1.0
    label = "strain"

    def velocity(self, t, q):
        q = np.asarray(q, float)
        return self.rate * np.stack([q[..., 0], -q[..., 1]], axis=-1)

    def stream(self, t, q):
        q = np.asarray(q, float)
        return self.rate * q[..., 0] * q[..., 1]

    def pressure(self, t, q):
        q = np.asarray(q, float)
        return -0.5 * self.rate**2 * np.sum(q * q, axis=-1)

    def vorticity(self, t, q):
        return np.zeros(np.shape(q)[:-1])

    def vorticity_grad(self, t, q):
        return np.zeros(np.shape(q))

    def descriptor(self):
        return {"kind": "strain", "rate": self.rate}


def background_from_descriptor(desc: Optional[dict], surface: Surface) -> Background:
    desc = desc or {"kind": "zero"}
    kind = desc.get("kind", "zero")
    if kind == "zero":
        return ZeroBackground()
    if kind == "linear_shear":
        _need(surface, Plane, kind)
        return LinearShear(float(desc.get("rate", 1.0)))
    if kind == "rigid_rotation":
        _need(surface, Sphere, kind)
        return RigidRotation(float(desc.get("omega", 1.0)), surface.radius)
    if kind == "uniform":
        if isinstance(surface, Sphere):
            raise ValueError("uniform background is defined on the plane and torus only")
        u, v = desc.get("velocity", (1.0, 0.0))
        return UniformFlow(float(u), float(v), periodic=isinstance(surface, FlatTorus))
    if kind == "strain":
        _need(surface, Plane, kind)
        return Strain(float(desc.get("rate", 1.0)))
    raise ValueError(f"unknown background kind {kind!r}")


def _need(surface, cls, kind):
    if not isinstance(surface, cls):
        raise ValueError(f"background {kind!r} requires a {cls.kind}, got {surface.kind}")


# -- velocities -------------------------------------------------------------

def _pairs(n: int):
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    return i, j


def regularized_velocities(state: VortexState, kernel: GreenKernel,
                           threshold: Optional[float] = None) -> np.ndarray:
    """All ``v_n(q_n)`` at once, shape (N, dim).

    ``v_n = -J (sum_{m != n} Gamma_m grad_{q_n} G(q_m, q_n) + Gamma_n grad R(q_n) / 2)``.
    The factor 1/2 is the derivative of the regular part ``G + log d / (2 pi)``
    in one slot at the diagonal.
    """
    s = kernel.surface
    q = state.positions
    gam = state.strengths
    n = state.n
    thr = collision_threshold(s) if threshold is None else threshold
    grad = 0.5 * gam[:, None] * kernel.robin_grad(q)
    if n > 1:
        m_idx, n_idx = _pairs(n)
        d = s.distance(q[m_idx], q[n_idx])
        k = int(np.argmin(d))
        if d[k] <= thr:
            raise SingularConfigurationError(
                f"vortices {(int(m_idx[k]), int(n_idx[k]))} at distance {d[k]:.3g} <= {thr:.3g}")
        g = gam[m_idx, None] * kernel.grad_y(q[m_idx], q[n_idx])
        np.add.at(grad, n_idx, g)
    return -s.rotate_j(q, grad)


def regularized_velocity(n: int, state: VortexState, kernel: GreenKernel) -> np.ndarray:
    if not 0 <= n < state.n:
        raise IndexError(f"vortex index {n} out of range for {state.n} vortices")
    return regularized_velocities(state, kernel)[n]


def pv_rhs(t: float, state: VortexState, background: Background, beta: GrowthRate,
           kernel: GreenKernel, threshold: Optional[float] = None) -> np.ndarray:
    """Right-hand side of the point vortex equation, shape (N, dim)."""
    out = np.zeros_like(state.positions)
    if beta.beta_x != 0.0:
        out = out + beta.beta_x * background.velocity(t, state.positions)
    if beta.beta_omega != 0.0:
        out = out + beta.beta_omega * regularized_velocities(state, kernel, threshold)
    return out


def induced_velocity(q: np.ndarray, positions: np.ndarray, strengths: np.ndarray,
                     kernel: GreenKernel, skip: Optional[int] = None) -> np.ndarray:
    """Full vortex-induced velocity ``u(q) = -J sum_n Gamma_n grad_q G(q_n, q)``.

    ``q`` has shape (..., dim). ``skip`` drops one vortex from the sum.
    """
    s = kernel.surface
    q = np.asarray(q, float)
    grad = np.zeros_like(q)
    for n, (p, g) in enumerate(zip(np.asarray(positions, float), np.asarray(strengths, float))):
        if n == skip:
            continue
        if np.any(s.distance(q, p) == 0.0):
            raise SingularConfigurationError("velocity evaluated at a vortex position")
        grad = grad + g * kernel.grad_y(np.broadcast_to(p, q.shape), q)
    return -s.rotate_j(q, grad)


def induced_stream(q: np.ndarray, positions, strengths, kernel: GreenKernel) -> np.ndarray:
    q = np.asarray(q, float)
    out = np.zeros(q.shape[:-1])
    for p, g in zip(np.asarray(positions, float), np.asarray(strengths, float)):
        out = out + g * kernel.value(np.broadcast_to(p, q.shape), q)
    return out


def field_velocity(t: float, q: np.ndarray, state: Optional[VortexState], background: Background,
                   kernel: GreenKernel) -> np.ndarray:
    """Total velocity ``X(q) + u(q)`` off the vortex set. ``state=None`` means no vortices."""
    x = background.velocity(t, q)
    if state is None:
        return x
    return x + induced_velocity(q, state.positions, state.strengths, kernel)


def pressure_field(t: float, q: np.ndarray, state: Optional[VortexState], background: Background,
                   beta: GrowthRate, kernel: GreenKernel) -> np.ndarray:
    """``P + (2 beta_X - 1) g(X, u) + (2 beta_omega - 1) |u|^2 / 2``."""
    s = kernel.surface
    q = np.asarray(q, float)
    X = background.velocity(t, q)
    if state is None:
        u = np.zeros_like(X)
    else:
        u = induced_velocity(q, state.positions, state.strengths, kernel)
    return (background.pressure(t, q)
            + (2.0 * beta.beta_x - 1.0) * s.inner(q, X, u)
            + (2.0 * beta.beta_omega - 1.0) * 0.5 * s.inner(q, u, u))


# -- first integrals ---------------------------------------------------------

def hamiltonian(t: float, state: VortexState, background: Background, beta: GrowthRate,
                kernel: GreenKernel) -> float:
    """``beta_omega (sum_{n<m} G_nm Gamma_n Gamma_m + sum_n Gamma_n^2 R_n / 2) + beta_X sum_n Gamma_n psi_X(q_n)``."""
    if not background.autonomous:
        raise NoHamiltonianError("no Hamiltonian available for a time-dependent background")
    if beta.beta_x != 0.0 and not background.has_stream:
        raise NoHamiltonianError("no Hamiltonian available: background has no global stream function")
    q = state.positions
    gam = state.strengths
    h_vort = 0.5 * float(np.sum(gam**2 * kernel.robin(q)))
    if state.n > 1:
        i, j = np.triu_indices(state.n, k=1)
        h_vort += float(np.sum(gam[i] * gam[j] * kernel.value(q[i], q[j])))
    h = beta.beta_omega * h_vort
    if beta.beta_x != 0.0:
        h += beta.beta_x * float(np.sum(gam * background.stream(t, q)))
    return h


@dataclass(frozen=True)
class Moments:
    surface: str
    linear: np.ndarray
    angular: Optional[float] = None

    def as_dict(self) -> dict:
        out = {"surface": self.surface, "linear": [float(x) for x in self.linear]}
        if self.angular is not None:
            out["angular"] = float(self.angular)
        return out


def conserved_moments(state: VortexState, surface: Surface) -> Moments:
    """Plane: impulse and angular impulse. Sphere: moment vector. Torus: weighted centroid mod periods."""
    q = state.positions
    gam = state.strengths
    if isinstance(surface, Plane):
        return Moments("plane", gam @ q, float(np.sum(gam * np.sum(q * q, axis=-1))))
    if isinstance(surface, Sphere):
        return Moments("sphere", surface.radius * (gam @ q))
    if isinstance(surface, FlatTorus):
        return Moments("torus", np.mod(gam @ q, np.asarray(surface.periods)))
    raise TypeError(f"unsupported surface {surface!r}")


def merger_threshold(c: float, gamma: float, xi0: float, beta: GrowthRate) -> float:
    """Sign parameter ``c beta_X xi0^2 / (gamma beta_omega)``; merger when negative."""
    den = gamma * beta.beta_omega
    if den == 0.0:
        raise ValueError("merger threshold undefined for gamma * beta_omega = 0")
    return c * beta.beta_x * xi0**2 / den


# -- bundled system -----------------------------------------------------------

@dataclass(frozen=True)
class PointVortexSystem:
    """Surface, kernel, strengths, background and growth rate bound together.

    ``rhs(t, q)`` acts on bare position arrays, which is what the integrators use.
    """

    surface: Surface
    strengths: np.ndarray
    background: Background = field(default_factory=ZeroBackground)
    beta: GrowthRate = field(default_factory=GrowthRate)
    kernel: Optional[GreenKernel] = None
    threshold: Optional[float] = None
    speed: float = 1.0  # scales the whole vector field; 1 for the true dynamics

    def __post_init__(self):
        object.__setattr__(self, "strengths", np.array(self.strengths, dtype=float, ndmin=1))
        if self.kernel is None:
            object.__setattr__(self, "kernel", green_kernel(self.surface))
        if self.threshold is None:
            object.__setattr__(self, "threshold", collision_threshold(self.surface))

    def state(self, q: np.ndarray) -> VortexState:
        return VortexState(q, self.strengths)

    def rhs(self, t: float, q: np.ndarray) -> np.ndarray:
        q = self.surface.project(q)
        v = pv_rhs(t, self.state(q), self.background, self.beta, self.kernel, self.threshold)
        return self.speed * v if self.speed != 1.0 else v

    def hamiltonian(self, t: float, q: np.ndarray) -> float:
        return hamiltonian(t, self.state(q), self.background, self.beta, self.kernel)

    def moments(self, q: np.ndarray) -> Moments:
        return conserved_moments(self.state(q), self.surface)

    def has_hamiltonian(self) -> bool:
        return self.background.autonomous and (self.beta.beta_x == 0.0 or self.background.has_stream)
