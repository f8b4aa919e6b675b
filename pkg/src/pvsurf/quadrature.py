"""Quadrature and extrapolation helpers shared by the kernel and current checks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import Sphere, Surface


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def trapezoid_angles(n: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n) / n


@dataclass(frozen=True)
class Extrapolation:
    value: float
    error: float
    tableau: np.ndarray


def richardson(h: Sequence[float], values: Sequence[float]) -> Extrapolation:
    """Polynomial (Neville) extrapolation of ``values(h)`` to ``h = 0``.

    With k samples this cancels the h, h^2, ..., h^(k-1) terms of the defect.
    The error estimate is the change between the last two diagonal entries.
    """
    h = np.asarray(h, float)
    y = np.asarray(values, float)
    n = len(h)
    if n == 0:
        raise ValueError("no samples to extrapolate")
    tab = np.full((n, n), np.nan)
    tab[:, 0] = y
    for j in range(1, n):
        for i in range(j, n):
            tab[i, j] = tab[i, j - 1] + (tab[i, j - 1] - tab[i - 1, j - 1]) * h[i] / (h[i - j] - h[i])
    best = tab[n - 1, n - 1]
    err = abs(best - tab[n - 2, n - 2]) if n > 1 else math.inf
    return Extrapolation(float(best), float(err), tab)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log|y| against log x."""
    lx = np.log(np.asarray(x, float))
    ly = np.log(np.abs(np.asarray(y, float)))
    return float(np.polyfit(lx, ly, 1)[0])


def _exit_radius(surface: Surface, q: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float):
    """Distance along the geodesic ray ``exp_q(r dir)`` to the circle d(., center) = radius."""
    if isinstance(surface, Sphere):
        R = surface.radius
        A = float(np.dot(q, center))
        B = dirs @ center
        k = math.cos(radius / R) / np.sqrt(A * A + B * B)
        delta = np.arctan2(B, A)
        return R * (delta + np.arccos(np.clip(k, -1.0, 1.0)))
    d = surface.displacement(center, q)  # from center to q
    de = dirs @ d
    return -de + np.sqrt(de * de - d @ d + radius * radius)


def integrate_disk(
    surface: Surface,
    center: np.ndarray,
    radius: float,
    f: Callable[[np.ndarray], np.ndarray],
    singular: Optional[np.ndarray] = None,
    eps: float = 0.0,
    n_r: int = 48,
    n_theta: int = 128,
) -> float:
    """Integrate ``f`` over the geodesic disk ``B_radius(center)``.

    ``f`` takes points of shape (..., dim). When ``singular`` is given it must
    lie strictly inside the disk; the grid is then polar about that point with
    radial nodes clustered at it (``r = eps + (r_exit - eps) t^2``), which
    resolves integrable ``log r`` and ``1/r`` singularities, and the ball
    ``B_eps(singular)`` is excluded.
    """
    center = np.asarray(center, float)
    t, wt = gauss_legendre(n_r)
    th = trapezoid_angles(n_theta)
    if singular is None:
        e1, e2 = surface.tangent_frame(center)
        dirs = np.cos(th)[:, None] * e1 + np.sin(th)[:, None] * e2
        r = np.broadcast_to(radius * t, (n_theta, n_r))
        pts, jac = surface.geodesic_ray(center, dirs, r)
        w = radius * wt
        vals = f(pts) * jac
        return float(np.sum(vals * w) * (2.0 * np.pi / n_theta))

    q = np.asarray(singular, float)
    if surface.distance(center, q) >= radius:
        raise ValueError("singular point must lie inside the disk")
    e1, e2 = surface.tangent_frame(q)
    dirs = np.cos(th)[:, None] * e1 + np.sin(th)[:, None] * e2
    r_exit = _exit_radius(surface, q, dirs, center, radius)
    if np.any(r_exit <= eps):
        raise ValueError("excluded ball reaches the disk boundary")
    span = (r_exit - eps)[:, None]
    r = eps + span * t**2
    dr = 2.0 * span * t * wt
    # base the rays at the image of q nearest to center (matters on the torus)
    base = center + surface.displacement(center, q) if not isinstance(surface, Sphere) else q
    pts, jac = surface.geodesic_ray(base, dirs, r)
    vals = f(pts) * jac
    return float(np.sum(vals * dr) * (2.0 * np.pi / n_theta))


def _smooth_step(u: np.ndarray) -> np.ndarray:
    """C-infinity transition from 0 (u <= 0) to 1 (u >= 1)."""
    u = np.clip(np.asarray(u, float), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def integrate_punctured(
    surface: Surface,
    center: np.ndarray,
    radius: float,
    f: Callable[[np.ndarray], np.ndarray],
    points: np.ndarray,
    eps: float,
    n_r: int = 48,
    n_theta: int = 128,
) -> float:
    """Integrate ``f`` over ``B_radius(center)`` minus the balls ``B_eps(p)``.

    ``f`` may be singular like ``1/r`` at the points and must vanish outside
    the disk. A partition of unity splits off a neighbourhood of each point
    that is integrated on a polar grid centred there; the weight is 1 on the
    inner half of each neighbourhood, so the remainder is smooth near the points.
    """
    center = np.asarray(center, float)
    pts = np.array(points, dtype=float, ndmin=2) if len(points) else np.zeros((0, surface.dim))
    if len(pts):
        near = surface.distance(pts, center) < radius + eps
        pts = pts[near]
    if len(pts) == 0:
        return integrate_disk(surface, center, radius, f, n_r=n_r, n_theta=n_theta)
    a = np.full(len(pts), 0.5 * radius)
    for i in range(len(pts)):
        if len(pts) > 1:
            others = np.delete(pts, i, axis=0)
            a[i] = min(a[i], 0.5 * float(np.min(surface.distance(others, pts[i]))))
    if np.any(0.5 * a <= eps):
        raise ValueError(f"excluded radius {eps:.3g} too large for point spacing (need < {0.5 * a.min():.3g})")

    def weight(x, i):
        s = surface.distance(x, pts[i]) / a[i]
        return 1.0 - _smooth_step(2.0 * s - 1.0)

    total = 0.0
    for i, p in enumerate(pts):
        inner = integrate_disk(surface, p, 0.5 * a[i], f, singular=p, eps=eps, n_r=n_r, n_theta=n_theta)
        ring = integrate_disk(surface, p, a[i], lambda x, i=i: weight(x, i) * f(x), singular=p,
                              eps=0.5 * a[i], n_r=n_r, n_theta=n_theta)
        total += inner + ring

    def rest(x):
        w = np.zeros(x.shape[:-1])
        for i in range(len(pts)):
            w = w + weight(x, i)
        return (1.0 - w) * f(x)

    return total + integrate_disk(surface, center, radius, _guarded(rest, surface, pts, 0.5 * a),
                                  n_r=n_r, n_theta=n_theta)


def _guarded(g, surface, pts, r_in):
    """Evaluate ``g`` only away from the points, where the partition weight is 1 anyway."""
    def h(x):
        out = np.zeros(x.shape[:-1])
        mask = np.ones(x.shape[:-1], bool)
        for p, r in zip(pts, r_in):
            mask &= surface.distance(x, p) > r
        if np.any(mask):
            out[mask] = g(x[mask])
        return out
    return h
