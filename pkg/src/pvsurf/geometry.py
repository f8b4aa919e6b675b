"""Surface catalog: the plane, round spheres and flat tori.

Points and tangent vectors are plain numpy arrays whose last axis holds the
coordinates, so every operation broadcasts over leading axes.

* ``Plane``: points and tangents are 2-vectors.
* ``Sphere``: points are unit 3-vectors (the physical sphere of radius ``R``
  is ``R * x``); tangents are physical 3-vectors orthogonal to the base point.
* ``FlatTorus``: points are 2-vectors reduced into ``[0, L1) x [0, L2)``;
  tangents are 2-vectors in the flat chart.

``J`` is the rotation by +pi/2 in the surface orientation (outward normal on
the sphere), so ``J d1 = d2`` on the plane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

SPHERE_UNIT_TOL = 1e-12


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def _rot90(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v, dtype=float)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


class Surface:
    """Common interface; concrete surfaces override the geometry."""

    kind: str = ""
    dim: int = 2
    compact: bool = False

    # -- metric -----------------------------------------------------------
    @property
    def area(self) -> float:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        """Length scale used for default tolerances (1 on the plane)."""
        raise NotImplementedError

    def inner(self, p: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        return _dot(np.asarray(v, float), np.asarray(w, float))

    def norm(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.sqrt(self.inner(p, v, v))

    def rotate_j(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        return _rot90(np.asarray(v, float))

    # -- points -----------------------------------------------------------
    def project(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, float)

    def validate_points(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"{self.kind} points need {self.dim} coordinates, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite point coordinates")
        return x

    def displacement(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Tangent vector at ``p`` with ``exp_p(displacement) = q`` (shortest)."""
        return np.asarray(q, float) - np.asarray(p, float)

    def distance(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        return self.norm(p, self.displacement(p, q))

    def exp(self, p: np.ndarray, v: np.ndarray, h: float = 1.0) -> np.ndarray:
        return self.project(self.shift(p, v, h))

    def shift(self, p: np.ndarray, v: np.ndarray, h: float) -> np.ndarray:
        """Raw chart step ``p + h v`` without projecting back to the surface."""
        return np.asarray(p, float) + h * np.asarray(v, float)

    def retract(self, p: np.ndarray, v: np.ndarray, h: float) -> np.ndarray:
        """First-order retraction, exact on flat surfaces."""
        return self.project(self.shift(p, v, h))

    def tangent_frame(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Orthonormal ``(e1, e2)`` at ``p`` with ``J e1 = e2``."""
        p = np.asarray(p, float)
        e1 = np.zeros_like(p)
        e1[..., 0] = 1.0
        return e1, _rot90(e1)

    def circle(self, p: np.ndarray, eps: float, theta: np.ndarray):
        """Geodesic circle of radius ``eps`` about ``p``.

        Returns ``(points, tangent, radial, dl)``: points on the circle, the
        counterclockwise unit tangent, the outward unit radial vector and the
        arclength per unit angle.
        """
        p = np.asarray(p, float)
        c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
        e1, e2 = self.tangent_frame(p)
        radial = c * e1 + s * e2
        tangent = -s * e1 + c * e2
        pts = self.project(p + eps * radial)
        return pts, tangent, radial, eps

    def geodesic_ray(self, p: np.ndarray, direction: np.ndarray, r: np.ndarray):
        """Points ``exp_p(r * direction)`` and the area density ``dA = J(r) dr dtheta``.

        ``direction`` has shape (m, dim) (unit tangents at ``p``), ``r`` has
        shape (m, k). Returns points (m, k, dim) and Jacobian (m, k).
        """
        p = np.asarray(p, float)
        pts = p + r[..., None] * direction[:, None, :]
        return self.project(pts), r

    # -- sampling ---------------------------------------------------------
    def random_points(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def random_tangents(self, rng: np.random.Generator, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, float)
        return rng.normal(size=p.shape)

    def descriptor(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Plane(Surface):
    kind = "plane"
    dim = 2
    compact = False

    @property
    def area(self) -> float:
        return math.inf

    @property
    def diameter(self) -> float:
        return 1.0

    def random_points(self, rng, n):
        return rng.uniform(-1.0, 1.0, size=(n, 2))

    def descriptor(self):
        return {"kind": "plane"}


@dataclass(frozen=True)
class Sphere(Surface):
    radius: float = 1.0

    kind = "sphere"
    dim = 3
    compact = True

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError(f"sphere radius must be positive, got {self.radius}")

    @property
    def area(self) -> float:
        return 4.0 * math.pi * self.radius**2

    @property
    def diameter(self) -> float:
        return math.pi * self.radius

    def project(self, x):
        x = np.asarray(x, float)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def validate_points(self, x):
        x = super().validate_points(x)
        if np.any(np.abs(np.linalg.norm(x, axis=-1) - 1.0) > SPHERE_UNIT_TOL):
            raise ValueError("sphere points must be unit vectors")
        return x

    def rotate_j(self, p, v):
        return np.cross(np.asarray(p, float), np.asarray(v, float))

    def to_tangent(self, p, v):
        """Orthogonal projection of an ambient vector onto the tangent plane at ``p``."""
        p = np.asarray(p, float)
        v = np.asarray(v, float)
        return v - _dot(p, v)[..., None] * p

    def displacement(self, p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        w = q - _dot(p, q)[..., None] * p
        sin_a = np.linalg.norm(w, axis=-1)
        ang = np.arctan2(sin_a, _dot(p, q))
        scale = np.where(sin_a > 0, ang / np.where(sin_a > 0, sin_a, 1.0), 1.0)
        return self.radius * scale[..., None] * w

    def distance(self, p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        return self.radius * np.arctan2(np.linalg.norm(np.cross(p, q), axis=-1), _dot(p, q))

    def exp(self, p, v, h=1.0):
        p = np.asarray(p, float)
        v = np.asarray(v, float)
        speed = np.linalg.norm(v, axis=-1, keepdims=True)
        ang = h * speed / self.radius
        unit = np.divide(v, speed, out=np.zeros_like(v), where=speed > 0)
        return self.project(np.cos(ang) * p + np.sin(ang) * unit)

    def shift(self, p, v, h):
        return np.asarray(p, float) + (h / self.radius) * np.asarray(v, float)

    def tangent_frame(self, p):
        p = np.asarray(p, float)
        # seed axis least aligned with p, per point
        axis = np.argmin(np.abs(p), axis=-1)
        seed = np.zeros_like(p)
        np.put_along_axis(seed, axis[..., None], 1.0, axis=-1)
        e1 = self.to_tangent(p, seed)
        e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
        return e1, np.cross(p, e1)

    def circle(self, p, eps, theta):
        p = np.asarray(p, float)
        a = eps / self.radius
        c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
        e1, e2 = self.tangent_frame(p)
        d = c * e1 + s * e2
        pts = math.cos(a) * p + math.sin(a) * d
        tangent = -s * e1 + c * e2
        radial = -math.sin(a) * p + math.cos(a) * d
        return pts, tangent, radial, self.radius * math.sin(a)

    def geodesic_ray(self, p, direction, r):
        p = np.asarray(p, float)
        a = r / self.radius
        pts = np.cos(a)[..., None] * p + np.sin(a)[..., None] * direction[:, None, :]
        return pts, self.radius * np.sin(a)

    def random_points(self, rng, n):
        return self.project(rng.normal(size=(n, 3)))

    def random_tangents(self, rng, p):
        p = np.asarray(p, float)
        return self.to_tangent(p, rng.normal(size=p.shape))

    def descriptor(self):
        return {"kind": "sphere", "radius": self.radius}


@dataclass(frozen=True)
class FlatTorus(Surface):
    periods: Tuple[float, float] = (1.0, 1.0)

    kind = "torus"
    dim = 2
    compact = True

    def __post_init__(self):
        periods = tuple(float(x) for x in self.periods)
        if len(periods) != 2 or not all(x > 0 and math.isfinite(x) for x in periods):
            raise ValueError(f"torus periods must be two positive lengths, got {self.periods}")
        object.__setattr__(self, "periods", periods)

    @property
    def area(self) -> float:
        return self.periods[0] * self.periods[1]

    @property
    def diameter(self) -> float:
        return 0.5 * math.hypot(*self.periods)

    @property
    def _L(self) -> np.ndarray:
        return np.asarray(self.periods)

    def project(self, x):
        x = np.mod(np.asarray(x, float), self._L)
        # mod can round up to exactly L for tiny negative inputs
        return np.where(x >= self._L, 0.0, x)

    def displacement(self, p, q):
        d = np.asarray(q, float) - np.asarray(p, float)
        d = d - self._L * np.round(d / self._L)
        # brute-force check over the 3x3 block of lattice images
        shifts = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], float) * self._L
        cand = d[..., None, :] + shifts
        best = np.argmin(_dot(cand, cand), axis=-1)
        return np.take_along_axis(cand, best[..., None, None], axis=-2)[..., 0, :]

    def random_points(self, rng, n):
        return rng.uniform(0.0, 1.0, size=(n, 2)) * self._L

    def descriptor(self):
        return {"kind": "torus", "periods": list(self.periods)}


def surface_from_descriptor(desc: dict) -> Surface:
    kind = desc.get("kind")
    if kind == "plane":
        return Plane()
    if kind == "sphere":
        return Sphere(float(desc.get("radius", 1.0)))
    if kind == "torus":
        return FlatTorus(tuple(desc.get("periods", (1.0, 1.0))))
    raise ValueError(f"unknown surface kind {kind!r}")


def pairwise_min_distance(surface: Surface, x: np.ndarray) -> Tuple[float, Tuple[int, int]]:
    """Smallest geodesic distance between distinct points and the index pair."""
    x = np.asarray(x, float)
    n = len(x)
    if n < 2:
        return math.inf, (-1, -1)
    i, j = np.triu_indices(n, k=1)
    d = surface.distance(x[i], x[j])
    k = int(np.argmin(d))
    return float(d[k]), (int(i[k]), int(j[k]))
