"""Hydrodynamic Green functions and Robin functions on the plane, sphere and flat torus.

Conventions: ``-Lap G(., y) = delta_y - 1/Area`` on closed surfaces and
``-Lap G(., y) = delta_y`` on the plane, ``G`` symmetric, and on closed
surfaces the additive constant is fixed by ``int G(., y) dA = 0``.
The Robin function is ``R(x) = lim_{y->x} G(x, y) + log d(x, y) / (2 pi)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .forms import TestForm
from .geometry import FlatTorus, Plane, Sphere, Surface
from .quadrature import integrate_disk, richardson

INV_2PI = 1.0 / (2.0 * math.pi)
INV_4PI = 1.0 / (4.0 * math.pi)


class DiagonalError(ValueError):
    """Kernel evaluated at coincident points."""


class GreenKernel:
    surface: Surface

    def value(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradient of ``G(x, .)`` at ``y``, as a tangent vector at ``y``."""
        raise NotImplementedError

    def robin(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def robin_grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def compensation(self, strengths: Sequence[float]) -> float:
        """Uniform vorticity density balancing the total circulation."""
        if not self.surface.compact:
            return 0.0
        return -float(np.sum(strengths)) / self.surface.area

    def _check_offdiag(self, x, y):
        if np.any(self.surface.distance(x, y) == 0.0):
            raise DiagonalError("evaluation on diagonal")


@dataclass(frozen=True)
class PlaneGreen(GreenKernel):
    surface: Plane = Plane()

    def value(self, x, y):
        self._check_offdiag(x, y)
        d = np.asarray(x, float) - np.asarray(y, float)
        return -INV_4PI * np.log(np.sum(d * d, axis=-1))

    def grad_y(self, x, y):
        self._check_offdiag(x, y)
        d = np.asarray(x, float) - np.asarray(y, float)
        return INV_2PI * d / np.sum(d * d, axis=-1)[..., None]

    def robin(self, x):
        return np.zeros(np.shape(x)[:-1])

    def robin_grad(self, x):
        return np.zeros(np.shape(x))


@dataclass(frozen=True)
class SphereGreen(GreenKernel):
    """``G = -(log(1 - x.y) - log 2 + 1) / (4 pi)`` on the unit-vector model."""

    surface: Sphere = Sphere()

    def _one_minus_dot(self, x, y):
        d = np.asarray(x, float) - np.asarray(y, float)
        return 0.5 * np.sum(d * d, axis=-1)

    def value(self, x, y):
        self._check_offdiag(x, y)
        return -INV_4PI * (np.log(self._one_minus_dot(x, y)) - math.log(2.0) + 1.0)

    def grad_y(self, x, y):
        self._check_offdiag(x, y)
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        tang = x - np.sum(x * y, axis=-1)[..., None] * y
        return tang / (4.0 * math.pi * self.surface.radius * self._one_minus_dot(x, y)[..., None])

    def robin(self, x):
        c = INV_2PI * math.log(self.surface.radius) + INV_4PI * (2.0 * math.log(2.0) - 1.0)
        return np.full(np.shape(x)[:-1], c)

    def robin_grad(self, x):
        return np.zeros(np.shape(x))


class TorusGreen(GreenKernel):
    """Theta-function kernel for the rectangular torus.

    With ``a`` the shorter period along the real axis, ``b >= a`` the other,
    ``w = pi z / a`` and ``q = exp(-pi b / a)``::

        G(z) = -(log|2 sin w| + sum_n log|1 - q^2n e^{2iw}| + log|1 - q^2n e^{-2iw}|) / (2 pi)
               + Im(z)^2 / (2 a b) + b / (12 a)

    ``z`` is the minimal-image difference. The log|2 sin w| factor carries
    the singular part exactly; the product converges like ``q^(2n-1)`` with
    ``q <= exp(-pi)`` and is truncated once the tail is below 1e-17.
    """

    def __init__(self, surface: FlatTorus):
        self.surface = surface
        L1, L2 = surface.periods
        self._swap = L2 < L1
        a, b = (L2, L1) if self._swap else (L1, L2)
        self._a, self._b = a, b
        q = math.exp(-math.pi * b / a)
        n_terms = max(1, int(math.ceil((math.log(1e-17) / math.log(q) + 1.0) / 2.0)))
        self._q2n = q ** (2.0 * np.arange(1, n_terms + 1))
        self._sum_log = float(np.sum(np.log1p(-self._q2n)))
        self.n_terms = n_terms

    def __reduce__(self):
        return (TorusGreen, (self.surface,))

    def _z(self, x, y):
        d = self.surface.displacement(np.asarray(y, float), np.asarray(x, float))  # x - y
        if self._swap:
            d = d[..., ::-1]
        return d[..., 0], d[..., 1]

    def _log_2sin(self, w):
        im = np.abs(w.imag)
        small = im < 20.0
        wi = np.where(small, w, 1j)
        direct = 0.5 * np.log(4.0 * (np.sin(wi.real) ** 2 + np.sinh(wi.imag) ** 2))
        ws = np.where(w.imag >= 0, w, -w)
        ws = np.where(small, 1j, ws)
        far = im + np.log(np.abs(1.0 - np.exp(2j * ws)))
        return np.where(small, direct, far)

    def value(self, x, y):
        self._check_offdiag(x, y)
        dx, dy = self._z(x, y)
        w = (math.pi / self._a) * (dx + 1j * dy)
        E = np.exp(2j * w)[..., None]
        prod = np.sum(np.log(np.abs(1.0 - self._q2n * E)) + np.log(np.abs(1.0 - self._q2n / E)), axis=-1)
        return (-INV_2PI * (self._log_2sin(w) + prod)
                + dy * dy / (2.0 * self._a * self._b) + self._b / (12.0 * self._a))

    def grad_y(self, x, y):
        self._check_offdiag(x, y)
        dx, dy = self._z(x, y)
        w = (math.pi / self._a) * (dx + 1j * dy)
        small = np.abs(w.imag) < 20.0
        wi = np.where(small, w, 1j)
        cot_direct = np.cos(wi) / np.sin(np.where(small, w, 1.0))
        up = w.imag >= 0
        Es = np.exp(2j * np.where(up, w, -w) * np.where(small, 0.0, 1.0))
        cot_far = np.where(up, 1j * (Es + 1.0) / (Es - 1.0 + (Es == 1.0)), 1j * (1.0 + Es) / (1.0 - Es + (Es == 1.0)))
        cot = np.where(small, cot_direct, cot_far)
        E = np.exp(2j * w)[..., None]
        A = self._q2n * E
        B = self._q2n / E
        F = cot + np.sum(-2j * A / (1.0 - A) + 2j * B / (1.0 - B), axis=-1)
        gx = -F.real / (2.0 * self._a)
        gy = F.imag / (2.0 * self._a) + dy / (self._a * self._b)
        # grad_y G(x, y) = -grad_z g(z) at z = x - y
        out = -np.stack([gx, gy], axis=-1)
        return out[..., ::-1] if self._swap else out

    def robin(self, x):
        c = -INV_2PI * (math.log(2.0 * math.pi / self._a) + 2.0 * self._sum_log) + self._b / (12.0 * self._a)
        return np.full(np.shape(x)[:-1], c)

    def robin_grad(self, x):
        return np.zeros(np.shape(x))


def green_kernel(surface: Surface) -> GreenKernel:
    if isinstance(surface, Plane):
        return PlaneGreen(surface)
    if isinstance(surface, Sphere):
        return SphereGreen(surface)
    if isinstance(surface, FlatTorus):
        return TorusGreen(surface)
    raise TypeError(f"no Green kernel for {surface!r}")


# -- independent checks ----------------------------------------------------

def robin_limit(kernel: GreenKernel, x: np.ndarray, direction: np.ndarray,
                eps0: float = 0.05, ratio: float = 0.5, count: int = 6):
    """Extrapolate ``G(x, exp_x(eps u)) + log(eps) / (2 pi)`` to ``eps -> 0``."""
    s = kernel.surface
    x = np.asarray(x, float)
    u = np.asarray(direction, float)
    u = u / s.norm(x, u)
    eps = eps0 * ratio ** np.arange(count)
    vals = [float(kernel.value(x, s.exp(x, u, e))) + INV_2PI * math.log(e) for e in eps]
    return richardson(eps, vals)


def robin_grad_numeric(kernel: GreenKernel, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central differences of the extrapolated Robin limit along a tangent frame."""
    s = kernel.surface
    x = np.asarray(x, float)
    grad = np.zeros_like(x)
    for e in s.tangent_frame(x):
        vals = []
        for h in (step, -step):
            y = s.exp(x, e, h)
            vals.append(robin_limit(kernel, y, s.tangent_frame(y)[0]).value)
        grad = grad + (vals[0] - vals[1]) / (2.0 * step) * e
    return grad


@dataclass(frozen=True)
class PoissonCheck:
    residual: float
    lhs: float
    rhs: float
    quadrature_error: float
    converged: bool


def verify_poisson(kernel: GreenKernel, phi: TestForm, x0: np.ndarray,
                   n_r: int = 64, n_theta: int = 192, quad_tol: float = 1e-9) -> PoissonCheck:
    """Quadrature check of ``int G(., x0) (-Lap phi) dA = phi(x0) - mean(phi)``.

    The mean term is present on closed surfaces only. The quadrature is run
    at two resolutions; their difference is reported as ``quadrature_error``
    and ``converged`` is False when it exceeds ``quad_tol``.
    """
    s = kernel.surface
    x0 = s.project(np.asarray(x0, float))

    def integrand(pts):
        return kernel.value(pts, np.broadcast_to(x0, pts.shape)) * (-phi.laplacian(pts))

    inside = float(s.distance(phi.center, x0)) < phi.radius
    if inside and float(s.distance(phi.center, x0)) > 0.9 * phi.radius:
        raise ValueError("x0 too close to the support boundary for the polar rule; move it inward or outward")
    sing = x0 if inside else None
    if not inside and float(s.distance(phi.center, x0)) < 1.1 * phi.radius:
        raise ValueError("x0 too close to the support boundary for the polar rule; move it inward or outward")

    if phi.amplitude == 0.0:
        return PoissonCheck(0.0, 0.0, 0.0, 0.0, True)
    coarse = integrate_disk(s, phi.center, phi.radius, integrand, singular=sing, n_r=n_r, n_theta=n_theta)
    fine = integrate_disk(s, phi.center, phi.radius, integrand, singular=sing, n_r=2 * n_r, n_theta=2 * n_theta)
    rhs = float(phi.value(x0))
    if s.compact:
        rhs -= phi.integral() / s.area
    qerr = abs(fine - coarse)
    return PoissonCheck(abs(fine - rhs), fine, rhs, qerr, qerr <= quad_tol)
