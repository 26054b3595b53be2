"""Simulation and empirical orbit analysis.

Dormand-Prince 5(4) integration with cubic Hermite dense output, Poincare
return maps, limit-cycle detection, and Monte Carlo checks of the certified
contraction claims (Poincare contraction, disturbance tubes, inward flow on
region boundaries).
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .certcheck import MetricCertificate, grid_points, metric_distance_segment
from .certcheck import complement_basis
from .sysmodel import DynSystem, Region

logger = logging.getLogger(__name__)

EQUILIBRIUM = "equilibrium"
DIVERGENT = "divergent"
UNDETERMINED = "undetermined"
LIMIT_CYCLE = "limit_cycle"

BLOWUP = 1e8

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


class IntegrationError(RuntimeError):
    pass


class NoReturnError(RuntimeError):
    pass


@dataclass
class Trajectory:
    """Accepted steps of one integration; ``derivs`` holds f at every node."""

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    steps: int = 0
    rejected: int = 0
    max_error: float = 0.0
    divergent: bool = False
    names: tuple[str, ...] = ()

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t) -> np.ndarray:
        """Cubic Hermite interpolation between accepted steps; t may be an array."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise ValueError("time outside the integrated interval")
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        out = _hermite(self.times[i], self.times[i + 1], self.states[i], self.states[i + 1],
                       self.derivs[i], self.derivs[i + 1], t)
        return out[0] if scalar else out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = self.names or tuple(f"x{i + 1}" for i in range(self.states.shape[1]))
        w.writerow(("t",) + tuple(names))
        for t, x in zip(self.times, self.states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])
        return buf.getvalue()


def _hermite(t0, t1, y0, y1, f0, f1, t):
    h = (t1 - t0)[:, None] if np.ndim(t0) else t1 - t0
    s = ((t - t0) / (t1 - t0))
    s = s[:, None] if np.ndim(s) else s
    h00 = 2 * s ** 3 - 3 * s ** 2 + 1
    h10 = s ** 3 - 2 * s ** 2 + s
    h01 = -2 * s ** 3 + 3 * s ** 2
    h11 = s ** 3 - s ** 2
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def integrate_fn(fn: Callable[[np.ndarray], np.ndarray], x0, t_max: float, tol: float = 1e-9,
                 t0: float = 0.0, h0: float | None = None, max_steps: int = 2_000_000,
                 stop: Callable[[float, np.ndarray], bool] | None = None,
                 names: tuple[str, ...] = (), fixed_step: float | None = None) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) on x' = fn(x) over [t0, t0 + t_max].

    A step is accepted when the embedded error estimate satisfies
    max|err| <= tol * max(1, |x|_inf). ``stop(t, x)`` may end the run early
    after any accepted step. ``fixed_step`` disables step control (every step
    accepted), which exposes the fifth-order convergence directly.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state is not finite")
    t = float(t0)
    t_end = t0 + t_max
    k1 = np.asarray(fn(x), dtype=float)
    times, states, derivs = [t], [x.copy()], [k1.copy()]
    if h0 is None:
        d0 = max(1.0, float(np.max(np.abs(x))))
        d1 = float(np.max(np.abs(k1)))
        h0 = 0.01 * d0 / d1 if d1 > 1e-12 else 1e-3
        h0 = min(h0, t_max, 0.1)
    h = h0 if fixed_step is None else float(fixed_step)
    steps = rejected = 0
    max_err = 0.0
    divergent = False
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        if steps + rejected >= max_steps:
            raise IntegrationError(f"step budget exhausted at t={t:.6g}")
        h = min(h, t_end - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise IntegrationError(f"step size underflow at t={t:.6g} (stiff or singular system?)")
        K = [k1]
        for s in range(1, 7):
            xs = x + h * sum(a * k for a, k in zip(_A[s], K) if a != 0.0)
            K.append(np.asarray(fn(xs), dtype=float))
        x_new = xs  # stage 7 point is the 5th-order solution (FSAL)
        err = h * np.abs(sum(e * k for e, k in zip(_E, K) if e != 0.0))
        scale = tol * max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(x_new))))
        ratio = float(np.max(err)) / scale if np.all(np.isfinite(x_new)) else np.inf
        if ratio <= 1.0 or fixed_step is not None:
            t += h
            x = x_new
            k1 = K[6]
            steps += 1
            max_err = max(max_err, float(np.max(err)))
            times.append(t)
            states.append(x.copy())
            derivs.append(k1.copy())
            if np.max(np.abs(x)) > BLOWUP:
                divergent = True
                break
            if stop is not None and stop(t, x):
                break
            fac = 5.0 if ratio == 0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
            if fixed_step is not None:
                fac = 1.0
        else:
            rejected += 1
            fac = 0.2 if not np.isfinite(ratio) else max(0.2, 0.9 * ratio ** -0.2)
        h *= fac
    return Trajectory(np.array(times), np.array(states), np.array(derivs), steps, rejected, max_err, divergent, names)


def _field(sys: DynSystem):
    if not sys.is_bound:
        raise ValueError(f"system {sys.name} has unbound parameters: " + ", ".join(p.name for p in sys.params))
    return sys.vector_field()


def integrate(sys: DynSystem, x0, t_max: float, tol: float = 1e-9, backward: bool = False, **kw) -> Trajectory:
    """Integrate a bound system; ``backward`` integrates x' = -f (times still increase)."""
    fn = _field(sys)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise ValueError(f"initial state has shape {x0.shape}, system has {sys.n} states")
    if backward:
        return integrate_fn(lambda x: -fn(x), x0, t_max, tol, names=sys.states, **kw)
    return integrate_fn(fn, x0, t_max, tol, names=sys.states, **kw)


# -- Poincare maps -----------------------------------------------------------


@dataclass(frozen=True)
class Section:
    """Hyperplane {x : normal . (x - anchor) = 0}, crossed in the +normal direction.

    ``radius`` optionally restricts returns to points within that distance of the anchor.
    """

    anchor: np.ndarray
    normal: np.ndarray
    radius: float = np.inf

    @staticmethod
    def make(anchor, normal, radius: float = np.inf) -> Section:
        a = np.asarray(anchor, dtype=float)
        n = np.asarray(normal, dtype=float)
        nn = float(np.linalg.norm(n))
        if nn == 0:
            raise ValueError("section normal must be nonzero")
        return Section(a, n / nn, radius)

    def offset(self, x) -> np.ndarray:
        return (np.asarray(x) - self.anchor) @ self.normal


def _refine_crossing(traj: Trajectory, i: int, sec: Section, tol: float = 1e-10) -> tuple[float, np.ndarray]:
    """Bisection on the cubic interpolant between nodes i and i+1."""
    a, b = traj.times[i], traj.times[i + 1]
    for _ in range(200):
        m = 0.5 * (a + b)
        xm = traj.at(m)
        g = float(sec.offset(xm))
        if abs(g) < tol or b - a < 1e-15 * max(1.0, abs(m)):
            return m, xm
        if g < 0:
            a = m
        else:
            b = m
    return m, xm


def poincare_map(sys: DynSystem, section: Section, x0, tol: float = 1e-10, t_limit: float = 1e3,
                 min_time: float = 0.0) -> tuple[np.ndarray, float]:
    """First return of x0 (on the section) to the section, same crossing direction."""
    fn = _field(sys)
    x0 = np.asarray(x0, dtype=float)
    if float(fn(x0) @ section.normal) <= 0:
        raise ValueError("flow is not transversal to the section at x0 (f(x0).normal <= 0)")
    state = {"prev": 0.0, "left": False, "hit": False}

    def stop(t, x):
        g = float(section.offset(x))
        if g < 0:
            state["left"] = True
        elif (state["left"] and state["prev"] < 0 and t > min_time
              and np.linalg.norm(x - section.anchor) <= section.radius):
            state["hit"] = True
        state["prev"] = g
        return state["hit"]

    traj = integrate_fn(fn, x0, t_limit, tol, stop=stop)
    if traj.divergent:
        raise NoReturnError("no return (trajectory diverged)")
    if not state["hit"]:
        raise NoReturnError("no return (not oscillating from x0?)")
    t, x = _refine_crossing(traj, len(traj.times) - 2, section)
    return x, t


# -- limit cycles ------------------------------------------------------------


@dataclass
class OrbitEstimate:
    anchor: np.ndarray
    period: float
    samples: np.ndarray
    times: np.ndarray
    section_normal: np.ndarray
    residual: float
    periods: list[float] = field(default_factory=list)
    kind: str = LIMIT_CYCLE
    derivs: np.ndarray | None = None

    def at(self, t) -> np.ndarray:
        """Point on the orbit at phase time t (cubic Hermite between samples)."""
        if self.derivs is None:
            raise ValueError("orbit carries no derivative samples")
        t = np.mod(np.asarray(t, dtype=float), self.period)
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        return _hermite(self.times[i], self.times[i + 1], self.samples[i], self.samples[i + 1],
                        self.derivs[i], self.derivs[i + 1], t)

    def to_csv(self, names: tuple[str, ...] = ()) -> str:
        buf = io.StringIO()
        anchor = " ".join(repr(float(v)) for v in self.anchor)
        buf.write(f"# period={float(self.period)!r} anchor={anchor}\n")
        w = csv.writer(buf, lineterminator="\n")
        names = names or tuple(f"x{i + 1}" for i in range(self.samples.shape[1]))
        w.writerow(("t",) + tuple(names))
        for t, x in zip(self.times, self.samples):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])
        return buf.getvalue()


@dataclass
class NoCycle:
    """Outcome of a detection that found no periodic orbit."""

    kind: str
    point: np.ndarray
    reason: str = ""


def detect_limit_cycle(sys: DynSystem, x0, transient: float = 200.0, tol: float = 1e-10,
                       eq_tol: float = 1e-6, return_tol: float = 1e-7, max_returns: int = 1000,
                       n_periods: int = 5, period_rtol: float = 1e-3, t_limit: float = 1e3,
                       n_samples: int = 2000) -> OrbitEstimate | NoCycle:
    """Classify the long-term behaviour from x0.

    Integrates past the transient, then either reports an equilibrium (|f| <
    eq_tol), divergence, or iterates a Poincare map on the section through the
    current point normal to f until returns settle. ``n_periods`` successive
    return times must then agree within ``period_rtol``.
    """
    fn = _field(sys)
    traj = integrate(sys, x0, transient, tol)
    if traj.divergent:
        return NoCycle(DIVERGENT, traj.final, "trajectory left |x| <= 1e8")
    x = traj.final
    fx = fn(x)
    if np.linalg.norm(fx) < eq_tol:
        return NoCycle(EQUILIBRIUM, x, f"|f| = {np.linalg.norm(fx):.3g} after t = {transient:g}")
    section = Section.make(x, fx)
    periods: list[float] = []
    prev = x
    settled = 0
    for k in range(max_returns):
        try:
            nxt, T = poincare_map(sys, section, prev, tol=1e-10, t_limit=t_limit)
        except NoReturnError as exc:
            # slow spiral into a weakly stable point: follow it until |f| settles
            end = integrate(sys, prev, 20 * transient, tol,
                            stop=lambda t, x: np.linalg.norm(fn(x)) < eq_tol).final
            if np.linalg.norm(fn(end)) < eq_tol:
                return NoCycle(EQUILIBRIUM, end, str(exc))
            return NoCycle(UNDETERMINED, prev, str(exc))
        except (ValueError, IntegrationError) as exc:
            return NoCycle(UNDETERMINED, prev, str(exc))
        periods.append(T)
        step = float(np.linalg.norm(nxt - prev))
        prev = nxt
        settled = settled + 1 if step < return_tol else 0
        if settled >= n_periods:
            recent = np.array(periods[-n_periods:])
            if np.ptp(recent) <= period_rtol * recent.mean():
                break
        if np.linalg.norm(fn(nxt)) < eq_tol:
            return NoCycle(EQUILIBRIUM, nxt, "returns collapsed onto an equilibrium")
    else:
        return NoCycle(UNDETERMINED, prev, f"returns did not settle after {max_returns} iterations")
    T = float(np.mean(periods[-n_periods:]))
    one = integrate(sys, prev, T, tol)
    ts = np.linspace(0.0, T, n_samples + 1)
    samples = one.at(np.minimum(ts, one.times[-1]))
    return OrbitEstimate(prev, T, samples, ts, section.normal, step, periods, derivs=sys.rhs_many(samples))


# -- certificate corroboration -------------------------------------------------


@dataclass
class ContractionTestReport:
    passed: bool
    ratios: np.ndarray
    skipped: int
    pairs: int

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max()) if len(self.ratios) else float("nan")


def poincare_contraction_test(sys: DynSystem, cert: MetricCertificate, orbit: OrbitEstimate, n_pairs: int = 20,
                              spread: float = 0.05, seed: int = 0, region: Region | None = None,
                              return_map: Callable[[np.ndarray], np.ndarray] | None = None,
                              steps: int = 32) -> ContractionTestReport:
    """Map random pairs near the orbit's section anchor once around; metric distance must shrink."""
    region = region or sys.region
    rng = np.random.default_rng(seed)
    section = Section.make(orbit.anchor, orbit.section_normal, radius=np.inf)
    P = complement_basis(orbit.section_normal)
    if return_map is None:
        T = orbit.period

        def return_map(x):
            return poincare_map(sys, section, x, t_limit=10 * T, min_time=0.5 * T)[0]

    ratios = []
    skipped = 0
    for _ in range(n_pairs):
        u1 = rng.uniform(-spread, spread, P.shape[1])
        u2 = rng.uniform(-spread, spread, P.shape[1])
        x1, x2 = orbit.anchor + P @ u1, orbit.anchor + P @ u2
        d0 = metric_distance_segment(cert, x1, x2, steps)
        if d0 == 0:
            skipped += 1
            continue
        y1, y2 = return_map(x1), return_map(x2)
        if region is not None and not all(region.contains(p) for p in (x1, x2, y1, y2)):
            raise ValueError("pair left the certified region")
        ratios.append(metric_distance_segment(cert, y1, y2, steps) / d0)
    ratios = np.array(ratios)
    return ContractionTestReport(bool(len(ratios)) and bool(np.all(ratios < 1.0)), ratios, skipped, n_pairs)


def metric_sup_gain(cert: MetricCertificate, X: np.ndarray) -> float:
    """sup over X of the operator norm of Theta = W^-1/2, i.e. 1/sqrt(lambda_min(W))."""
    lam = np.linalg.eigvalsh(cert.W.eval_many(X))[:, 0]
    if np.any(lam <= 0):
        raise ValueError("W is not positive definite on the grid")
    return float(np.max(lam ** -0.5))


@dataclass
class TubeReport:
    d_max: float
    bound: float
    gain: float
    empirical_post: float
    empirical_pre: float
    per_run: np.ndarray
    transient: float
    horizon: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "d_max": self.d_max,
            "bound_grid_estimate": self.bound,
            "empirical_post_transient": self.empirical_post,
            "empirical_pre_transient": self.empirical_pre,
            "transient": self.transient,
            "horizon": self.horizon,
            "runs": len(self.per_run),
            "passed": self.passed,
        }


def orbit_foot(X: np.ndarray, orbit: OrbitEstimate) -> np.ndarray:
    """Nearest orbit point to each row of X: closest sample, then golden-section
    search over the neighbouring sample intervals on the interpolated orbit."""
    X = np.atleast_2d(X)
    S = orbit.samples[:-1]
    d2 = np.sum(X * X, axis=1)[:, None] - 2 * X @ S.T + np.sum(S * S, axis=1)[None, :]
    i = np.argmin(d2, axis=1)
    if orbit.derivs is None:
        return S[i]
    dt = orbit.times[1] - orbit.times[0]
    a, b = orbit.times[i] - dt, orbit.times[i] + dt
    g = 0.5 * (np.sqrt(5.0) - 1.0)
    for _ in range(50):
        c, d = b - g * (b - a), a + g * (b - a)
        fc = np.sum((orbit.at(c) - X) ** 2, axis=1)
        fd = np.sum((orbit.at(d) - X) ** 2, axis=1)
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    return orbit.at(0.5 * (a + b))


def orbit_distance(cert: MetricCertificate, X: np.ndarray, orbit: OrbitEstimate, steps: int = 8) -> np.ndarray:
    """Metric length of the straight segment from each x to its nearest orbit point."""
    X = np.atleast_2d(X)
    feet = orbit_foot(X, orbit)
    return np.array([metric_distance_segment(cert, x, p, steps) for x, p in zip(X, feet)])


def _rk4_batch(sys: DynSystem, X: np.ndarray, D: np.ndarray, dt: float, n: int) -> np.ndarray:
    for _ in range(n):
        k1 = sys.rhs_many(X) + D
        k2 = sys.rhs_many(X + 0.5 * dt * k1) + D
        k3 = sys.rhs_many(X + 0.5 * dt * k2) + D
        k4 = sys.rhs_many(X + dt * k3) + D
        X = X + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return X


def disturbance_tube_check(sys: DynSystem, cert: MetricCertificate, orbit: OrbitEstimate, d_max: float,
                           n_runs: int = 100, horizon: float = 60.0, transient: float = 20.0, seed: int = 0,
                           grid: np.ndarray | None = None, grid_per_axis: int = 200, region: Region | None = None,
                           hold: float = 0.1, substeps: int = 10, sample_every: float = 0.5) -> TubeReport:
    """Monte Carlo check of the steady-state tube bound sup|Theta d| / lambda.

    Each run starts on the orbit anchor and is driven by a disturbance that is
    constant on intervals of ``hold`` time units, with direction uniform on the
    sphere and magnitude d_max. Run r uses the RNG stream seeded by (seed, r).
    The sup is a grid estimate over the verification grid.
    """
    if cert.rho is None and cert.mode != "strong":
        raise ValueError("certificate has no multiplier")
    if d_max < 0:
        raise ValueError("d_max must be nonnegative")
    region = region or sys.region
    if grid is None:
        if region is None:
            raise ValueError("need a region or an explicit grid for the bound")
        grid = grid_points(region, grid_per_axis)
    gain = metric_sup_gain(cert, grid)
    bound = gain * d_max / cert.lam
    n = sys.n
    X = np.repeat(orbit.anchor[None, :], n_runs, axis=0)
    rngs = [np.random.default_rng([seed, r]) for r in range(n_runs)]
    dt = hold / substeps
    n_hold = int(round(horizon / hold))
    every = max(1, int(round(sample_every / hold)))
    pre = np.zeros(n_runs)
    post = np.zeros(n_runs)
    for k in range(n_hold):
        D = np.empty((n_runs, n))
        for r, g in enumerate(rngs):
            u = g.standard_normal(n)
            D[r] = d_max * u / np.linalg.norm(u)
        X = _rk4_batch(sys, X, D, dt, substeps)
        if (k + 1) % every == 0:
            dist = orbit_distance(cert, X, orbit)
            t = (k + 1) * hold
            if t <= transient:
                pre = np.maximum(pre, dist)
            else:
                post = np.maximum(post, dist)
    emp_post = float(post.max())
    return TubeReport(d_max, bound, gain, emp_post, float(pre.max()), post, transient, horizon, emp_post <= bound)


# -- region boundary --------------------------------------------------------


@dataclass
class BoundaryFlowReport:
    n_points: int
    n_violations: int
    worst_rate: float
    violations: np.ndarray
    per_constraint: list[tuple[int, int]]

    @property
    def passed(self) -> bool:
        return self.n_points > 0 and self.n_violations == 0


def boundary_flow_check(sys: DynSystem, region: Region | None = None, n_samples: int = 2000,
                        seed: int = 0, tol: float = 1e-9) -> BoundaryFlowReport:
    """Sample each constraint boundary g_i = 0 (other constraints strictly active) and
    test inward flow, grad g_i . f > 0."""
    region = region or sys.region
    if region is None:
        raise ValueError("no region given")
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in region.box])
    hi = np.array([b[1] for b in region.box])
    nv = len(region.box)
    pts_all, rates_all, per = [], [], []
    for i, g in enumerate(region.constraints):
        grads = [g.diff(j) for j in range(nv)]
        X = lo + (hi - lo) * rng.random((n_samples, nv))
        for _ in range(60):
            gv = g.eval_many(X)
            G = np.stack([d.eval_many(X) for d in grads], axis=1)
            nrm2 = np.maximum(np.sum(G * G, axis=1), 1e-300)
            X = X - (gv / nrm2)[:, None] * G
        gv = g.eval_many(X)
        ok = np.abs(gv) < tol * (1 + np.abs(X).max(axis=1) ** 2)
        ok &= np.all((X >= lo) & (X <= hi), axis=1)
        others = [c for k, c in enumerate(region.constraints) if k != i]
        for c in others:
            ok &= c.eval_many(X) > 0
        X = X[ok]
        G = np.stack([d.eval_many(X) for d in grads], axis=1)
        rate = np.sum(G[:, :sys.n] * sys.rhs_many(X), axis=1)
        pts_all.append(X)
        rates_all.append(rate)
        per.append((len(X), int(np.sum(rate <= 0))))
    X = np.concatenate(pts_all) if pts_all else np.zeros((0, nv))
    rates = np.concatenate(rates_all) if rates_all else np.zeros(0)
    bad = rates <= 0
    return BoundaryFlowReport(len(X), int(bad.sum()), float(rates.min()) if len(rates) else float("nan"),
                              X[bad], per)
