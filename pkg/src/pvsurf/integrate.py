"""Time stepping for the point vortex equation.

Three schemes share one driver: classical RK4 with a fixed step, the
Dormand-Prince 5(4) pair with PI step-size control, and the implicit midpoint
rule solved by fixed-point iteration. Stages are formed in the ambient chart
(``Surface.shift``); the vector field projects its argument, and every accepted
step lands back on the surface through ``Surface.retract``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dynamics import (LinearShear, NoHamiltonianError, PointVortexSystem, SingularConfigurationError,
                       merger_threshold)
from .geometry import pairwise_min_distance

SCHEMES = ("rk4", "dopri45", "midpoint")


class IntegrationError(RuntimeError):
    """Hard failure. ``state`` holds the last good time and positions."""

    def __init__(self, message: str, time: float, positions: np.ndarray, partial: Optional["Trajectory"] = None):
        super().__init__(f"{message} at t={time!r}; positions={np.array2string(np.asarray(positions), precision=17)}")
        self.time = time
        self.positions = np.asarray(positions)
        self.partial = partial


class MaxStepsExceeded(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "dopri45"
    dt: Optional[float] = None  # fixed step (rk4, midpoint) or initial step (dopri45)
    rtol: float = 1e-10
    atol: float = 1e-10
    max_steps: int = 1_000_000
    close_approach: Optional[float] = None  # None: 1e-6 * surface diameter
    sample_interval: Optional[float] = None  # None: every step (adaptive) or endpoints only (fixed)
    event_tol: float = 1e-9
    midpoint_tol: float = 1e-14
    midpoint_maxiter: int = 100

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme != "dopri45" and self.dt is None:
            raise ValueError(f"scheme {self.scheme!r} needs a step dt")
        for name in ("dt", "sample_interval"):
            val = getattr(self, name)
            if val is not None and not (val > 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be positive, got {val}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.close_approach is not None and self.close_approach < 0:
            raise ValueError("close_approach threshold must be nonnegative")


@dataclass(frozen=True)
class CloseApproach:
    time: float
    pair: Tuple[int, int]
    distance: float
    threshold: float

    def as_dict(self):
        return {"type": "close_approach", "time": self.time, "pair": list(self.pair),
                "distance": self.distance, "threshold": self.threshold}


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (K, N, dim)
    system: PointVortexSystem
    events: List[CloseApproach] = field(default_factory=list)
    n_steps: int = 0
    n_rejected: int = 0
    n_evals: int = 0

    @property
    def completed(self) -> bool:
        return not self.events

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    def state(self, i: int):
        return self.system.state(self.positions[i])

    def hamiltonian(self) -> Optional[np.ndarray]:
        if not self.system.has_hamiltonian():
            return None
        return np.array([self.system.hamiltonian(t, q) for t, q in zip(self.times, self.positions)])

    def hamiltonian_drift(self) -> Optional[float]:
        """``max |H - H0| / |H0|`` (absolute when ``H0 = 0``)."""
        try:
            h = self.hamiltonian()
        except NoHamiltonianError:
            return None
        if h is None:
            return None
        scale = abs(h[0]) if h[0] != 0.0 else 1.0
        return float(np.max(np.abs(h - h[0])) / scale)

    def min_separation(self) -> np.ndarray:
        return np.array([pairwise_min_distance(self.system.surface, q)[0] for q in self.positions])

    def max_separation(self) -> np.ndarray:
        s = self.system.surface
        out = []
        for q in self.positions:
            if len(q) < 2:
                out.append(math.inf)
                continue
            i, j = np.triu_indices(len(q), k=1)
            out.append(float(np.max(s.distance(q[i], q[j]))))
        return np.array(out)

    def moments(self):
        return [self.system.moments(q) for q in self.positions]

    def interpolate(self, t: float) -> np.ndarray:
        """Geodesic interpolation between neighbouring samples."""
        k = int(np.clip(np.searchsorted(self.times, t), 1, len(self.times) - 1))
        t0, t1 = self.times[k - 1], self.times[k]
        w = (t - t0) / (t1 - t0)
        s = self.system.surface
        q0 = self.positions[k - 1]
        return s.exp(q0, s.displacement(q0, self.positions[k]), w)


# -- Butcher tableaux --------------------------------------------------------

_RK4_A = [[], [0.5], [0.0, 0.5], [0.0, 0.0, 1.0]]
_RK4_B = [1 / 6, 1 / 3, 1 / 3, 1 / 6]
_RK4_C = [0.0, 0.5, 0.5, 1.0]

_DP_C = [0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0]
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = _DP_A[6] + [0.0]
# difference between the 5th and embedded 4th order weights
_DP_E = [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]


class _Counter:
    def __init__(self, f):
        self.f = f
        self.n = 0

    def __call__(self, t, q):
        self.n += 1
        v = self.f(t, q)
        if not np.all(np.isfinite(v)):
            raise IntegrationError("non-finite velocity", t, q)
        return v


def _combo(ks, coeffs):
    out = None
    for c, k in zip(coeffs, ks):
        if c == 0.0:
            continue
        out = c * k if out is None else out + c * k
    return out if out is not None else np.zeros_like(ks[0])


def _rk4_step(f, s, t, q, h, k1=None):
    ks = [f(t, q) if k1 is None else k1]
    for i in range(1, 4):
        ks.append(f(t + _RK4_C[i] * h, s.shift(q, _combo(ks, _RK4_A[i]), h)))
    return s.retract(q, _combo(ks, _RK4_B), h)


def _dopri_step(f, s, t, q, h, k1):
    ks = [k1]
    for i in range(1, 7):
        ks.append(f(t + _DP_C[i] * h, s.shift(q, _combo(ks, _DP_A[i]), h)))
    incr = _combo(ks, _DP_B)
    err = h * _combo(ks, _DP_E)
    return s.retract(q, incr, h), err, ks[6], incr


def _midpoint_step(f, s, t, q, h, k1, tol, maxiter):
    k = f(t + 0.5 * h, s.shift(q, k1, 0.5 * h))
    for _ in range(maxiter):
        k_new = f(t + 0.5 * h, s.shift(q, k, 0.5 * h))
        delta = float(np.max(np.abs(k_new - k)))
        k = k_new
        if delta * abs(h) <= tol * (1.0 + float(np.max(np.abs(q)))):
            return s.retract(q, k, h), k
    raise IntegrationError("implicit midpoint iteration did not converge", t, q)


def _sample_times(t0, t1, interval):
    if interval is None:
        return np.array([t0, t1])
    n = int(math.floor((t1 - t0) / interval * (1 + 1e-12)))
    ts = t0 + interval * np.arange(n + 1)
    if t1 - ts[-1] > 1e-12 * max(1.0, abs(t1)):
        ts = np.append(ts, t1)
    else:
        ts[-1] = t1
    return ts


def _initial_step(f, s, t0, q0, k0, rtol, atol, span):
    """Starting step guess in the spirit of Hairer-Norsett-Wanner (order 5)."""
    sc = atol + rtol * np.abs(q0)
    d0 = float(np.sqrt(np.mean((q0 / sc) ** 2)))
    d1 = float(np.sqrt(np.mean((k0 / sc) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    k1 = f(t0 + h0, s.shift(q0, k0, h0))
    d2 = float(np.sqrt(np.mean(((k1 - k0) / sc) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def integrate(system: PointVortexSystem, q0: np.ndarray, t0: float, t1: float,
              config: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Integrate from ``t0`` to ``t1`` and sample at ``config.sample_interval``.

    Stops early with a ``CloseApproach`` event when two vortices come within the
    threshold. The event time is located by bisection on the step size.
    """
    if not t1 > t0:
        raise ValueError(f"need t1 > t0, got [{t0}, {t1}]")
    s = system.surface
    q = s.validate_points(s.project(np.array(q0, dtype=float, ndmin=2)))
    thr = config.close_approach if config.close_approach is not None else system.threshold
    system.state(q).validate(s, thr)
    f = _Counter(system.rhs)
    samples = _sample_times(t0, t1, config.sample_interval)
    adaptive = config.scheme == "dopri45"
    record_every_step = adaptive and config.sample_interval is None

    times = [t0]
    out = [q.copy()]
    traj = Trajectory(np.array(times), np.array(out), system)
    n_steps = 0
    n_rej = 0
    t = t0
    k1 = f(t, q)
    if adaptive:
        h = config.dt if config.dt is not None else _initial_step(f, s, t0, q, k1, config.rtol, config.atol, t1 - t0)
        err_old = 1e-4

    def finish(events=()):
        traj.times = np.array(times)
        traj.positions = np.array(out)
        traj.events = list(events)
        traj.n_steps, traj.n_rejected, traj.n_evals = n_steps, n_rej, f.n
        return traj

    def take(q_start, t_start, hh, k_start):
        if config.scheme == "rk4":
            return _rk4_step(f, s, t_start, q_start, hh, k_start)
        if config.scheme == "midpoint":
            return _midpoint_step(f, s, t_start, q_start, hh, k_start, config.midpoint_tol, config.midpoint_maxiter)[0]
        return _dopri_step(f, s, t_start, q_start, hh, k_start)[0]

    def too_close(qq):
        return pairwise_min_distance(s, qq)[0] <= thr

    def locate(q_start, t_start, k_start, h_full):
        """Bisect the step size for the first crossing of the threshold."""
        lo, hi = 0.0, h_full
        while hi - lo > config.event_tol:
            mid = 0.5 * (lo + hi)
            try:
                bad = too_close(take(q_start, t_start, mid, k_start))
            except SingularConfigurationError:
                bad = True
            if bad:
                hi = mid
            else:
                lo = mid
        q_lo = take(q_start, t_start, lo, k_start) if lo > 0 else q_start
        dmin, pair = pairwise_min_distance(s, q_lo)
        return t_start + hi, q_lo, t_start + lo, pair, dmin

    for i_sample in range(1, len(samples)):
        target = samples[i_sample]
        if not adaptive:
            m = max(1, int(math.ceil((target - t) / config.dt - 1e-9)))
            hstep = (target - t) / m
        while t < target:
            if n_steps >= config.max_steps:
                raise MaxStepsExceeded(f"max_steps={config.max_steps} exceeded", t, q, finish())
            if adaptive:
                hh = min(h, target - t)
                last = hh >= target - t
                try:
                    q_new, err_vec, k_new, incr = _dopri_step(f, s, t, q, hh, k1)
                except SingularConfigurationError:
                    q_new, err_vec = None, None
                if q_new is None:
                    ev_t, q_lo, t_lo, pair, dmin = locate(q, t, k1, hh)
                    times.append(t_lo)
                    out.append(q_lo)
                    return finish([CloseApproach(ev_t, pair, dmin, thr)])
                sc = config.atol + config.rtol * np.maximum(np.abs(q), np.abs(s.shift(q, incr, hh)))
                err = float(np.sqrt(np.mean((err_vec / sc) ** 2)))
                if not math.isfinite(err):
                    raise IntegrationError("non-finite error estimate", t, q, finish())
                if err <= 1.0:
                    if too_close(q_new):
                        ev_t, q_lo, t_lo, pair, dmin = locate(q, t, k1, hh)
                        times.append(t_lo)
                        out.append(q_lo)
                        return finish([CloseApproach(ev_t, pair, dmin, thr)])
                    fac = 0.9 * max(err, 1e-10) ** -0.17 * err_old**0.04
                    h_next = hh * min(10.0, max(0.2, fac))
                    err_old = max(err, 1e-4)
                    t = target if last else t + hh
                    q = q_new
                    k1 = k_new
                    n_steps += 1
                    # a step clipped to hit a sample time says little about the next one
                    if hh >= h:
                        h = h_next
                    if record_every_step and t < target:
                        times.append(t)
                        out.append(q.copy())
                else:
                    n_rej += 1
                    h = hh * max(0.2, 0.9 * err ** -0.17)
                    if t + h == t:
                        raise IntegrationError("step size underflow", t, q, finish())
            else:
                last = (target - t) <= 1.5 * hstep
                hh = (target - t) if last else hstep
                try:
                    q_new = take(q, t, hh, k1)
                    bad = too_close(q_new)
                except SingularConfigurationError:
                    bad = True
                if bad:
                    ev_t, q_lo, t_lo, pair, dmin = locate(q, t, k1, hh)
                    times.append(t_lo)
                    out.append(q_lo)
                    return finish([CloseApproach(ev_t, pair, dmin, thr)])
                q = q_new
                t = target if last else t + hh
                n_steps += 1
                k1 = f(t, q)
            if not np.all(np.isfinite(q)):
                raise IntegrationError("non-finite state", t, q, finish())
        times.append(t)
        out.append(q.copy())
    return finish()


# -- sweeps --------------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    system: PointVortexSystem
    positions: np.ndarray
    t0: float
    t1: float
    config: IntegratorConfig


@dataclass
class SweepResult:
    params: List[Mapping]
    trajectories: List[Optional[Trajectory]]
    errors: List[Optional[str]]
    summary: List[Dict]


def summarize(params: Mapping, spec: RunSpec, traj: Trajectory) -> Dict:
    row = dict(params)
    sys_ = spec.system
    mu = math.nan
    if isinstance(sys_.background, LinearShear) and len(sys_.strengths) == 2 \
            and sys_.strengths[0] == sys_.strengths[1] and sys_.beta.beta_omega != 0.0:
        xi0 = float(sys_.surface.distance(spec.positions[0], spec.positions[1]))
        mu = merger_threshold(sys_.background.rate, float(sys_.strengths[0]), xi0, sys_.beta)
    drift = traj.hamiltonian_drift()
    row.update({
        "mu_prime": mu,
        "min_separation": float(np.min(traj.min_separation())),
        "max_separation": float(np.max(traj.max_separation())),
        "h_drift": math.nan if drift is None else drift,
        "events": len(traj.events),
    })
    return row


def _run_one(spec: RunSpec) -> Trajectory:
    return integrate(spec.system, spec.positions, spec.t0, spec.t1, spec.config)


def sweep(specs: Sequence[RunSpec], params: Optional[Sequence[Mapping]] = None,
          workers: int = 1) -> SweepResult:
    """Integrate every spec; results and summary rows keep the input order."""
    specs = list(specs)
    params = [dict(p) for p in params] if params is not None else [{"index": i} for i in range(len(specs))]
    if len(params) != len(specs):
        raise ValueError("params and specs differ in length")
    if not specs:
        return SweepResult([], [], [], [])
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, sp) for sp in specs]
            results = []
            for fut in futures:
                try:
                    results.append((fut.result(), None))
                except (IntegrationError, SingularConfigurationError, ValueError) as exc:
                    results.append((None, f"{type(exc).__name__}: {exc}"))
    else:
        results = []
        for sp in specs:
            try:
                results.append((_run_one(sp), None))
            except (IntegrationError, SingularConfigurationError, ValueError) as exc:
                results.append((None, f"{type(exc).__name__}: {exc}"))
    trajs = [r[0] for r in results]
    errs = [r[1] for r in results]
    summary = []
    for p, sp, tr, e in zip(params, specs, trajs, errs):
        if tr is None:
            row = dict(p)
            row.update({"mu_prime": math.nan, "min_separation": math.nan, "max_separation": math.nan,
                        "h_drift": math.nan, "events": 0, "error": e})
            summary.append(row)
        else:
            summary.append(summarize(p, sp, tr))
    return SweepResult(params, trajs, errs, summary)
