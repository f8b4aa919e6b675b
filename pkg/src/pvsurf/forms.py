"""Compactly supported bump test forms with closed-form derivatives."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import FlatTorus, Sphere, Surface
from .quadrature import gauss_legendre


@dataclass(frozen=True)
class TestForm:
    """Bump ``amplitude * (1 - (r/radius)^2)^4`` in the geodesic distance ``r`` to ``center``.

    A 0-form is the bump itself. A 1-form is the bump times a covector field:
    a constant chart vector on flat surfaces, or the tangential part of a
    fixed ambient vector on the sphere. 1-forms are handled through their
    dual vector fields. The profile is C^3 across the support boundary.
    """

    __test__ = False  # keep pytest from collecting this class

    surface: Surface
    center: np.ndarray
    radius: float
    degree: int = 0
    amplitude: float = 1.0
    covector: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "center", self.surface.project(np.asarray(self.center, float)))
        if self.degree not in (0, 1):
            raise ValueError("test forms are 0-forms or 1-forms")
        if not self.radius > 0:
            raise ValueError("test form radius must be positive")
        if isinstance(self.surface, FlatTorus) and self.radius >= 0.5 * min(self.surface.periods):
            raise ValueError("torus test form must fit in a fundamental cell (radius < min(L)/2)")
        if isinstance(self.surface, Sphere) and self.radius >= math.pi * self.surface.radius:
            raise ValueError("sphere test form radius must be below pi R")
        if self.degree == 1:
            if self.covector is None:
                raise ValueError("1-form test forms need a covector")
            object.__setattr__(self, "covector", np.asarray(self.covector, float))

    # -- profile ----------------------------------------------------------
    def _s(self, x):
        r = self.surface.distance(x, self.center)
        return r, (r / self.radius) ** 2

    def bump(self, x: np.ndarray) -> np.ndarray:
        _, s = self._s(x)
        return self.amplitude * np.where(s < 1.0, (1.0 - np.minimum(s, 1.0)) ** 4, 0.0)

    def value(self, x: np.ndarray) -> np.ndarray:
        """Scalar value (0-form) or dual vector field (1-form) at ``x``."""
        x = np.asarray(x, float)
        b = self.bump(x)
        if self.degree == 0:
            return b
        if isinstance(self.surface, Sphere):
            a = self.surface.to_tangent(x, np.broadcast_to(self.covector, x.shape))
        else:
            a = np.broadcast_to(self.covector, x.shape)
        return b[..., None] * a

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Dual vector field of ``d phi`` (0-forms only)."""
        self._need_scalar()
        x = np.asarray(x, float)
        _, s = self._s(x)
        inside = s < 1.0
        coef = 8.0 * self.amplitude * np.where(inside, (1.0 - np.minimum(s, 1.0)) ** 3, 0.0) / self.radius**2
        toward = self.surface.displacement(x, np.broadcast_to(self.center, x.shape))
        return coef[..., None] * toward

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        """Laplace-Beltrami of the 0-form, ``div grad phi``."""
        self._need_scalar()
        x = np.asarray(x, float)
        r, s = self._s(x)
        inside = s < 1.0
        s = np.minimum(s, 1.0)
        rho2 = self.radius**2
        b_rr = -8.0 * (1.0 - s) ** 3 / rho2 + 48.0 * s * (1.0 - s) ** 2 / rho2
        b_r_over_r = -8.0 * (1.0 - s) ** 3 / rho2
        if isinstance(self.surface, Sphere):
            a = r / self.surface.radius
            safe = np.where(a > 1e-8, a, 1.0)
            factor = np.where(a > 1e-8, safe / np.tan(safe), 1.0 - a * a / 3.0)
        else:
            factor = 1.0
        return self.amplitude * np.where(inside, b_rr + factor * b_r_over_r, 0.0)

    def integral(self) -> float:
        """Integral of the 0-form against the area form."""
        self._need_scalar()
        if isinstance(self.surface, Sphere):
            R = self.surface.radius
            t, w = gauss_legendre(64)
            a = (self.radius / R) * t
            prof = (1.0 - (R * a / self.radius) ** 2) ** 4
            return float(self.amplitude * 2.0 * np.pi * R * R * np.sum(w * prof * np.sin(a)) * self.radius / R)
        return self.amplitude * math.pi * self.radius**2 / 5.0

    def _need_scalar(self):
        if self.degree != 0:
            raise ValueError("operation defined for 0-form test forms only")


def random_test_form(surface: Surface, rng: np.random.Generator, degree: int = 0,
                     radius_range=(0.3, 0.8)) -> TestForm:
    """Test form with random center, radius (scaled to the surface) and amplitude."""
    scale = min(surface.periods) if isinstance(surface, FlatTorus) else (surface.radius if isinstance(surface, Sphere) else 1.0)
    radius = rng.uniform(*radius_range) * scale * (0.5 if isinstance(surface, FlatTorus) else 1.0)
    center = surface.random_points(rng, 1)[0]
    amp = rng.uniform(0.5, 2.0)
    cov = None
    if degree == 1:
        cov = rng.normal(size=surface.dim)
    return TestForm(surface, center, radius, degree=degree, amplitude=amp, covector=cov)
