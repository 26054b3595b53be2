"""Sample-based search for contraction certificates.

W(x) (and rho(x)) are polynomial with unknown coefficients. The pointwise
conditions are imposed at sampled states, which gives a finite set of LMIs
in the coefficients; sdpfeas maximizes their common margin. Every candidate
is then re-checked on a denser grid by certcheck, and failing grid points are
fed back as extra samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .certcheck import (
    DEFAULT_MARGIN,
    STRONG,
    TRANSVERSE,
    GridReport,
    MetricCertificate,
    grid_points,
    grid_verify,
)
from .polycore import PolyMatrix, Polynomial, monomial_basis
from .sdpfeas import FeasibilityProblem, solve_feasibility
from .sysmodel import DynSystem, Region, bind_parameters, jacobian, parameter_region

logger = logging.getLogger(__name__)

UNIFORM = "uniform_rejection"
GRID = "grid"
BOUNDARY = "boundary_biased"

SAMPLED_MARGIN = 1e-4


class RegionSamplingError(ValueError):
    pass


# -- sampling --------------------------------------------------------------


@dataclass
class SampleSet:
    points: np.ndarray
    seed: int
    strategy: str

    def __len__(self) -> int:
        return len(self.points)


def _box_arrays(region: Region):
    lo = np.array([b[0] for b in region.box])
    hi = np.array([b[1] for b in region.box])
    return lo, hi


def _rejection(region: Region, count: int, rng, accept=None) -> np.ndarray:
    lo, hi = _box_arrays(region)
    out = []
    have = 0
    proposed = 0
    batch = max(1024, 4 * count)
    while have < count:
        X = lo + (hi - lo) * rng.random((batch, len(lo)))
        proposed += batch
        keep = region.contains_many(X)
        if accept is not None:
            keep &= accept(X)
        X = X[keep]
        out.append(X)
        have += len(X)
        if proposed >= 1_000_000 and have / proposed < 1e-4:
            raise RegionSamplingError("region too thin for rejection sampling")
    return np.concatenate(out)[:count]


def boundary_distance(region: Region, X: np.ndarray) -> np.ndarray:
    """First-order distance estimate g/|grad g| to the nearest constraint boundary."""
    if not region.constraints:
        return np.full(len(X), np.inf)
    est = []
    for g in region.constraints:
        val = g.eval_many(X)
        grad = np.stack([g.diff(i).eval_many(X) for i in range(region.dim)], axis=1)
        est.append(np.abs(val) / np.maximum(np.linalg.norm(grad, axis=1), 1e-12))
    return np.min(np.stack(est, axis=1), axis=1)


def sample_region(region: Region, count: int, seed: int = 0, strategy: str = UNIFORM) -> SampleSet:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    if strategy == UNIFORM:
        pts = _rejection(region, count, rng)
    elif strategy == GRID:
        lo, hi = _box_arrays(region)
        frac = max(_rejection(region, 256, np.random.default_rng(seed)).shape[0], 1) / 256
        per_axis = max(2, math.ceil((count / frac) ** (1.0 / region.dim)))
        while True:
            G = region.grid(per_axis)
            if len(G) >= count:
                break
            per_axis += 1
        pts = G[np.sort(rng.choice(len(G), count, replace=False))]
    elif strategy == BOUNDARY:
        lo, hi = _box_arrays(region)
        diam = float(np.linalg.norm(hi - lo))
        n_b = math.ceil(0.3 * count)
        near = _rejection(region, n_b, rng, lambda X: boundary_distance(region, X) <= 0.05 * diam)
        rest = _rejection(region, count - n_b, rng)
        pts = np.concatenate([near, rest])
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    return SampleSet(pts, seed, strategy)


# -- ansatz ----------------------------------------------------------------


@dataclass
class MetricAnsatz:
    """Polynomial parameterization of W (upper triangle) and rho.

    ``variables`` are the indices (into the system's variable list) that W and
    rho may depend on; by default all states. Normalization: trace(W(anchor)) = trace_value.
    Coefficients multiply the scaled monomials (x / var_scale)^a, which keeps
    them O(1) on a region of any size; ``build`` returns polynomials in x.
    """

    n: int
    nvars: int
    degree_W: int
    degree_rho: int = 0
    variables: tuple[int, ...] | None = None
    anchor: np.ndarray | None = None
    trace_value: float | None = None
    include_params: tuple[str, ...] = ()
    var_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.degree_W < 0 or self.degree_rho < 0:
            raise ValueError("ansatz degrees must be >= 0")
        if self.variables is None:
            self.variables = tuple(range(self.n))
        if self.anchor is None:
            self.anchor = np.zeros(self.nvars)
        self.anchor = np.asarray(self.anchor, dtype=float)
        self.var_scale = np.ones(self.nvars) if self.var_scale is None else np.asarray(self.var_scale, dtype=float)
        if np.any(self.var_scale <= 0):
            raise ValueError("var_scale must be positive")
        if self.trace_value is None:
            self.trace_value = float(self.n)
        k = len(self.variables)
        self.basis_W = [self._lift(e) for e in monomial_basis(k, self.degree_W)]
        self.basis_rho = [self._lift(e) for e in monomial_basis(k, self.degree_rho)]
        self.upper = [(i, j) for i in range(self.n) for j in range(i, self.n)]

    def _lift(self, e) -> tuple[int, ...]:
        full = [0] * self.nvars
        for v, k in zip(self.variables, e):
            full[v] = k
        return tuple(full)

    @property
    def n_W(self) -> int:
        return len(self.upper) * len(self.basis_W)

    def n_free(self, mode: str) -> int:
        return self.n_W + (len(self.basis_rho) if mode == TRANSVERSE else 0)

    def _unscale(self, basis) -> np.ndarray:
        return np.prod(self.var_scale[None, :] ** -np.array(basis, dtype=float), axis=1)

    def values(self, basis, X: np.ndarray) -> np.ndarray:
        return _mono_values(basis, X / self.var_scale)

    def lie_values(self, basis, X: np.ndarray, F: np.ndarray) -> np.ndarray:
        return _mono_lie(basis, X / self.var_scale, F / self.var_scale[:self.n], self.n)

    def build(self, v: np.ndarray, mode: str) -> tuple[PolyMatrix, Polynomial | None]:
        nb = len(self.basis_W)
        cw = self._unscale(self.basis_W)
        upper = {}
        for u, (i, j) in enumerate(self.upper):
            coefs = v[u * nb:(u + 1) * nb] * cw
            upper[(i, j)] = Polynomial(self.nvars, dict(zip(self.basis_W, coefs)))
        W = PolyMatrix.from_upper(self.n, upper, self.nvars)
        rho = None
        if mode == TRANSVERSE:
            rho = Polynomial(self.nvars, dict(zip(self.basis_rho, v[self.n_W:] * self._unscale(self.basis_rho))))
        return W, rho


def default_ansatz(sys: DynSystem, degree_W: int, degree_rho: int = 0, region: Region | None = None,
                   include_params: Sequence[str] = ()) -> MetricAnsatz:
    """Ansatz scaled to the region box, anchored at the region point nearest the box centre.

    ``include_params`` names unbound parameters W and rho may depend on.
    """
    region = region or sys.region
    if region is None:
        raise ValueError("system has no region of interest")
    lo, hi = _box_arrays(region)
    scale = np.maximum(np.abs(lo), np.abs(hi))
    scale[scale == 0] = 1.0
    centre = 0.5 * (lo + hi)
    pts = region.grid(41)
    anchor = centre if len(pts) == 0 else pts[np.argmin(np.sum(((pts - centre) / scale) ** 2, axis=1))]
    if sys.nvars > len(scale):
        # parameters appended after the states: scale by range, anchor at range midpoint
        extra = sys.params[len(scale) - sys.n:]
        lo_p = np.array([p.nominal if p.lo is None else p.lo for p in extra], dtype=float)
        hi_p = np.array([p.nominal if p.hi is None else p.hi for p in extra], dtype=float)
        ps = np.maximum(np.abs(lo_p), np.abs(hi_p))
        scale = np.concatenate([scale, np.where(ps > 0, ps, 1.0)])
        anchor = np.concatenate([anchor, 0.5 * (lo_p + hi_p)])
    names = [p.name for p in sys.params]
    unknown = [p for p in include_params if p not in names]
    if unknown:
        raise KeyError(f"unknown parameter(s) {', '.join(unknown)}")
    variables = tuple(range(sys.n)) + tuple(sys.n + names.index(p) for p in include_params)
    return MetricAnsatz(sys.n, sys.nvars, degree_W, degree_rho, variables=variables, anchor=anchor[:sys.nvars],
                        var_scale=scale[:sys.nvars], include_params=tuple(include_params))


def _mono_values(basis, X: np.ndarray) -> np.ndarray:
    E = np.array(basis, dtype=np.int64)
    out = np.ones((X.shape[0], len(basis)))
    for i in range(X.shape[1]):
        col = E[:, i]
        if col.any():
            out *= X[:, i:i + 1] ** col[None, :]
    return out


def _mono_lie(basis, X: np.ndarray, F: np.ndarray, n: int) -> np.ndarray:
    """sum_i d(m_c)/dx_i * f_i for each monomial, states only."""
    E = np.array(basis, dtype=np.int64)
    out = np.zeros((X.shape[0], len(basis)))
    for i in range(n):
        col = E[:, i]
        if not col.any():
            continue
        Ed = E.copy()
        Ed[:, i] = np.maximum(col - 1, 0)
        out += _mono_values([tuple(r) for r in Ed], X) * col[None, :] * F[:, i:i + 1]
    return out


def assemble_sampled(sys: DynSystem, ansatz: MetricAnsatz, X: np.ndarray, lam: float, eps_pd: float,
                     mode: str, jac: PolyMatrix | None = None, row_scale: np.ndarray | None = None):
    """Numeric per-sample blocks:  W - eps I,  -H + rho Q  (or -H),  rho.

    Returns a list of (F0, F) with F0 (N,d,d) and F (N,K,d,d), K = ansatz.n_free(mode).
    """
    n = sys.n
    K = ansatz.n_free(mode)
    N = len(X)
    jac = jacobian(sys) if jac is None else jac
    A = jac.eval_many(X)
    F = sys.rhs_many(X)
    mv = ansatz.values(ansatz.basis_W, X)
    ml = ansatz.lie_values(ansatz.basis_W, X, F)
    nb = len(ansatz.basis_W)
    Wc = np.zeros((N, K, n, n))
    Hc = np.zeros((N, K, n, n))
    for u, (i, j) in enumerate(ansatz.upper):
        E = np.zeros((n, n))
        E[i, j] = E[j, i] = 1.0
        AE = np.einsum("nab,bc->nac", A, E)
        sym = AE + AE.transpose(0, 2, 1) + lam * E[None]
        sl = slice(u * nb, (u + 1) * nb)
        Wc[:, sl] = mv[:, :, None, None] * E[None, None]
        Hc[:, sl] = mv[:, :, None, None] * sym[:, None] - ml[:, :, None, None] * E[None, None]
    blocks = []
    scale = np.ones(N) if row_scale is None else row_scale
    W0 = np.broadcast_to(-eps_pd * np.eye(n), (N, n, n)).copy()
    blocks.append((W0, Wc))
    L0 = np.zeros((N, n, n))
    Lc = -Hc
    if mode == TRANSVERSE:
        rv = ansatz.values(ansatz.basis_rho, X)
        Q = np.einsum("ni,nj->nij", F, F)
        Lc[:, ansatz.n_W:] = rv[:, :, None, None] * Q[:, None]
        R0 = np.zeros((N, 1, 1))
        Rc = np.zeros((N, K, 1, 1))
        Rc[:, ansatz.n_W:, 0, 0] = rv
    blocks.append((L0, Lc / scale[:, None, None, None]))
    if mode == TRANSVERSE:
        blocks.append((R0, Rc))
    return blocks


def _to_problem(blocks, ansatz: MetricAnsatz, K: int, target: float, box_half: float) -> tuple[FeasibilityProblem, np.ndarray, np.ndarray]:
    """Eliminate the trace normalization and wrap the blocks as a FeasibilityProblem.

    Returns (problem, offset, basis) with v = offset + basis @ z.
    """
    nb = len(ansatz.basis_W)
    a = np.zeros(K)
    anchor_vals = ansatz.values(ansatz.basis_W, ansatz.anchor[None, :])[0]
    for u, (i, j) in enumerate(ansatz.upper):
        if i == j:
            a[u * nb:(u + 1) * nb] = anchor_vals
    p = int(np.argmax(np.abs(a)))
    keep = [k for k in range(K) if k != p]
    offset = np.zeros(K)
    offset[p] = ansatz.trace_value / a[p]
    basis = np.zeros((K, K - 1))
    for col, k in enumerate(keep):
        basis[k, col] = 1.0
        basis[p, col] = -a[k] / a[p]
    reduced = []
    for F0, F in blocks:
        G0 = F0 + np.einsum("k,nkij->nij", offset, F)
        G = np.einsum("nkij,kz->nzij", F, basis)
        reduced.append((G0, G))
    box = (np.full(K - 1, -box_half), np.full(K - 1, box_half))
    return FeasibilityProblem(K - 1, box=box, target_margin=target, blocks=reduced), offset, basis


@dataclass
class SynthesisFailure:
    """Returned instead of a certificate. Never a claim of non-existence."""

    reason: str
    best_margin: float
    blocking_point: np.ndarray | None
    iterations: int = 0
    verification: GridReport | None = None

    def as_dict(self) -> dict:
        return {
            "reason": self.reason,
            "best_margin": self.best_margin,
            "blocking_point": None if self.blocking_point is None else [float(v) for v in self.blocking_point],
            "verification": None if self.verification is None else self.verification.as_dict(),
        }


@dataclass
class SynthesisResult:
    certificate: MetricCertificate | None
    failure: SynthesisFailure | None
    sampled_margin: float
    n_samples: int
    rounds: int = 1
    verification: GridReport | None = None
    coefficients: np.ndarray | None = None
    holdout: GridReport | None = None

    @property
    def ok(self) -> bool:
        return self.certificate is not None


def _row_scales(X: np.ndarray, n: int) -> np.ndarray:
    # keeps far-out samples from dominating the max-margin objective; dividing
    # by s >= 1 can only shrink a margin, so sampled guarantees stay valid
    r2 = np.sum(X[:, :n] ** 2, axis=1)
    return np.maximum(1.0, (1.0 + r2) ** 1.5)


def verification_grid(region: Region, n_min: int) -> np.ndarray:
    """Smallest tensor grid (per-axis count) with at least ``n_min`` points in the region."""
    d = len(region.box)
    per_axis = max(2, int(np.ceil(n_min ** (1.0 / d))))
    for _ in range(20):
        X = region.grid(per_axis)
        if len(X) >= n_min:
            return X
        grow = (n_min / max(len(X), 1)) ** (1.0 / d)
        per_axis = int(np.ceil(per_axis * min(grow, 4.0))) + 1
    raise RegionSamplingError("region too thin for a verification grid")


def synthesize_certificate(sys: DynSystem, ansatz: MetricAnsatz, samples: SampleSet | np.ndarray, lam: float,
                           eps_pd: float = 1e-3, mode: str = TRANSVERSE, margin: float = SAMPLED_MARGIN,
                           seed: int = 0, box_half: float = 1e4, max_iters: int = 100,
                           verify: bool = True, region: Region | None = None) -> SynthesisResult:
    """Fit W (and rho) so every sampled LMI holds with margin >= ``margin``.

    Margins, eps_pd and the coefficient box are relative to the normalization
    trace(W(anchor)) = trace_value, so rescaling it rescales the solution. With
    ``verify`` the candidate is replayed on a grid with at least four times as
    many region points as samples and only returned if it passes.
    """
    if mode not in (STRONG, TRANSVERSE):
        raise ValueError(f"unknown mode {mode!r}")
    X = samples.points if isinstance(samples, SampleSet) else np.atleast_2d(np.asarray(samples, dtype=float))
    if len(X) == 0:
        raise ValueError("no samples")
    if X.shape[1] != sys.nvars:
        raise ValueError(f"samples have {X.shape[1]} coordinates, system has {sys.nvars} variables")
    if ansatz.n != sys.n or ansatz.nvars != sys.nvars:
        raise ValueError("ansatz does not match the system dimensions")
    K = ansatz.n_free(mode)
    scale = ansatz.trace_value / ansatz.n
    blocks = assemble_sampled(sys, ansatz, X, lam, eps_pd * scale, mode, row_scale=_row_scales(X, sys.n))
    prob, offset, basis = _to_problem(blocks, ansatz, K, margin * scale, box_half * scale)
    res = solve_feasibility(prob, seed=seed, max_iters=max_iters)
    z = res.best_v
    v = offset + basis @ z
    worst_sample = None if res.worst_lmi is None else X[res.worst_lmi % len(X)]
    if not res.feasible:
        fail = SynthesisFailure(f"sampled LMIs not satisfied with margin {margin:g} ({res.status})",
                                res.achieved_margin / scale, worst_sample, res.iterations)
        return SynthesisResult(None, fail, res.achieved_margin / scale, len(X), coefficients=v)
    W, rho = ansatz.build(v, mode)
    cert = MetricCertificate(W, rho, lam, eps_pd * scale, mode, sys.name,
                             (ansatz.degree_W, ansatz.degree_rho if mode == TRANSVERSE else 0))
    out = SynthesisResult(cert, None, res.achieved_margin / scale, len(X), coefficients=v)
    region = region or sys.region
    if verify and region is not None:
        rep = grid_verify(sys, cert, points=verification_grid(region, 4 * len(X)), region=region)
        out.verification = rep
        if not rep.passed:
            out.failure = SynthesisFailure("certificate candidate failed verification", rep.worst_margin,
                                           rep.worst_point, res.iterations, rep)
            out.certificate = None
    return out


def default_sample_count(ansatz: MetricAnsatz, mode: str) -> int:
    return min(20000, 50 * ansatz.n_free(mode))


def certify(sys: DynSystem, ansatz: MetricAnsatz, lam: float, mode: str, n_samples: int | None = None,
            grid_per_axis: int = 200, eps_pd: float = 1e-3, margin: float = SAMPLED_MARGIN,
            verify_margin: float = DEFAULT_MARGIN, seed: int = 0, rounds: int = 6, add_per_round: int = 200,
            region: Region | None = None, strategy: str = UNIFORM, jobs: int = 1,
            box_half: float = 1e4, holdout: int | None = None) -> SynthesisResult:
    """Synthesize on samples, verify, add failing points, repeat.

    Each candidate is checked on the regular grid and on a holdout set of
    random points (boundary-biased, drawn with a different seed; by default
    as many points as the grid). Points failing either check join the
    samples for the next round, and success needs both checks to pass.
    The holdout exists because a certificate refined against one grid can
    still fail between its nodes. ``holdout=0`` disables it.
    """
    region = region or sys.region
    if region is None:
        raise ValueError("system has no region of interest")
    n_samples = n_samples or default_sample_count(ansatz, mode)
    pts = sample_region(region, n_samples, seed, strategy).points
    grid = grid_points(region, grid_per_axis)
    n_hold = len(grid) if holdout is None else holdout
    hold = sample_region(region, n_hold, seed + 1, BOUNDARY).points if n_hold else None
    last = None
    for rnd in range(1, rounds + 1):
        res = synthesize_certificate(sys, ansatz, pts, lam, eps_pd, mode, margin, seed, box_half, verify=False)
        res.rounds = rnd
        if not res.ok:
            return res
        rep = grid_verify(sys, res.certificate, points=grid, margin_req=verify_margin, region=region, jobs=jobs)
        res.verification = rep
        bad = [rep.failing_points, rep.worst_point[None, :]]
        passed = rep.passed
        if hold is not None:
            hrep = grid_verify(sys, res.certificate, points=hold, margin_req=verify_margin, region=region, jobs=jobs)
            res.holdout = hrep
            passed = passed and hrep.passed
            if not hrep.passed:
                bad += [hrep.failing_points, hrep.worst_point[None, :]]
        logger.info("certify round %d: samples=%d sampled_margin=%.3e grid worst=%.3e fails=%d holdout fails=%s",
                    rnd, len(pts), res.sampled_margin, rep.worst_margin, rep.n_fail,
                    res.holdout.n_fail if res.holdout is not None else "-")
        if passed:
            return res
        last = res
        worst = np.concatenate(bad[1::2])
        fails = np.concatenate(bad[0::2])
        if len(fails) > add_per_round:
            idx = np.linspace(0, len(fails) - 1, add_per_round).round().astype(int)
            fails = fails[idx]
        pts = np.concatenate([pts, fails, worst])
    rep = last.verification
    if rep.passed and last.holdout is not None:
        rep = last.holdout
    fail = SynthesisFailure("certificate candidate failed verification", rep.worst_margin,
                            rep.worst_point, verification=rep)
    return SynthesisResult(None, fail, last.sampled_margin, len(pts), rounds, rep, last.coefficients)


def robust_synthesize(sys: DynSystem, ansatz: MetricAnsatz, theta_box, lam: float, mode: str = TRANSVERSE,
                      samples: SampleSet | np.ndarray | None = None, n_samples: int | None = None,
                      grid_per_axis: int = 48, eps_pd: float = 1e-3, margin: float = SAMPLED_MARGIN,
                      verify_margin: float = DEFAULT_MARGIN, seed: int = 0, rounds: int = 6,
                      strategy: str = UNIFORM, box_half: float = 1e4) -> SynthesisResult:
    """One certificate W(x, theta), rho(x, theta) valid for every theta in ``theta_box``.

    ``theta_box`` maps each unbound parameter to (lo, hi). Samples and the
    verification grid live in K x Theta; the Lie derivative of W runs over the
    states only since theta is constant along trajectories.
    """
    if sys.is_bound:
        raise ValueError(f"system {sys.name} has no unbound parameters")
    region = parameter_region(sys, theta_box)
    if samples is not None:
        pts = samples.points if isinstance(samples, SampleSet) else np.atleast_2d(np.asarray(samples, dtype=float))
        if not np.all(region.contains_many(pts)):
            raise ValueError("samples must lie in K x theta_box")
        res = synthesize_certificate(sys, ansatz, pts, lam, eps_pd, mode, margin, seed, box_half, verify=False)
        if res.ok:
            rep = grid_verify(sys, res.certificate, grid_per_axis, margin_req=verify_margin, region=region)
            res.verification = rep
            if not rep.passed:
                res.failure = SynthesisFailure("certificate candidate failed verification", rep.worst_margin,
                                               rep.worst_point, verification=rep)
                res.certificate = None
        return res
    return certify(sys, ansatz, lam, mode, n_samples, grid_per_axis, eps_pd, margin, verify_margin, seed,
                   rounds, region=region, strategy=strategy, box_half=box_half)


# -- parameter sweeps --------------------------------------------------------

CONTRACTING = "contracting"
OSCILLATING = "transverse_oscillating"
UNDETERMINED_CLASS = "undetermined"


@dataclass
class ScanBudget:
    """Per-parameter-value synthesis settings for bifurcation_scan."""

    radius: float = 3.0
    degree_W: int = 4
    degree_rho: int = 2
    strong_lambdas: tuple[float, ...] = (0.1, 0.03, 0.01)
    transverse_lambdas: tuple[float, ...] = (0.02, 0.005)
    strong_samples: int = 500
    transverse_samples: int = 1500
    grid_per_axis: int = 100
    rounds: int = 6
    eps_fraction: float = 0.25
    eps_max: float = 0.1
    sim_start: tuple[float, ...] | None = None
    sim_transient: float = 200.0


@dataclass
class ScanRow:
    value: float
    classification: str
    best_margin_strong: float
    best_margin_transverse: float
    sim_class: str
    lam: float | None = None
    stage: str = "grid"

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "classification": self.classification,
            "best_margin_strong": self.best_margin_strong,
            "best_margin_transverse": self.best_margin_transverse,
            "sim_class": self.sim_class,
        }


@dataclass
class ScanResult:
    param: str
    rows: list[ScanRow]
    bracket: tuple[float, float] | None

    def to_csv(self) -> str:
        lines = [f"{self.param},classification,best_margin_strong,best_margin_transverse,sim_class"]
        for r in sorted(self.rows, key=lambda r: r.value):
            lines.append(f"{float(r.value)!r},{r.classification},{float(r.best_margin_strong)!r},"
                         f"{float(r.best_margin_transverse)!r},{r.sim_class}")
        return "\n".join(lines) + "\n"

    def disagreements(self) -> list[ScanRow]:
        """Rows outside the bracket where certificate and simulation classes differ."""
        expect = {CONTRACTING: "equilibrium", OSCILLATING: "limit_cycle"}
        out = []
        for r in self.rows:
            if self.bracket is not None and self.bracket[0] <= r.value <= self.bracket[1]:
                continue
            if expect.get(r.classification) != r.sim_class:
                out.append(r)
        return out


def ball_region(sys: DynSystem, radius: float, eps: float | None = None) -> Region:
    """Ball of ``radius`` about the origin, minus {|f|^2 < eps} when eps is given."""
    from .sysmodel import ball_constraint, fmin2_constraint
    cons = [ball_constraint(sys.n, radius, sys.nvars)]
    specs = [("ball", radius)]
    if eps is not None:
        cons.append(fmin2_constraint(sys.f, eps))
        specs.append(("fmin2", eps))
    return Region(tuple(cons), tuple((-radius, radius) for _ in range(sys.n)), tuple(specs))


def classify_value(sys: DynSystem, param: str, value: float, budget: ScanBudget | None = None,
                   seed: int = 0) -> ScanRow:
    """Strong synthesis first, then transverse synthesis on a region excluding a
    neighborhood of the equilibria sized from the simulated orbit."""
    from . import simlab
    budget = budget or ScanBudget()
    value = float(value)
    bound = bind_parameters(sys, {param: value})
    x0 = np.asarray(budget.sim_start if budget.sim_start is not None else np.ones(bound.n), dtype=float)
    sim = simlab.detect_limit_cycle(bound, x0, transient=budget.sim_transient)
    sim_class = sim.kind
    best_s = -np.inf
    region = ball_region(bound, budget.radius, None)
    ans = default_ansatz(bound, budget.degree_W, 0, region=region)
    for lam in budget.strong_lambdas:
        res = certify(bound, ans, lam, STRONG, budget.strong_samples, budget.grid_per_axis, seed=seed,
                      rounds=budget.rounds, region=region)
        best_s = max(best_s, res.sampled_margin if res.ok else (res.failure.best_margin if res.failure else -np.inf))
        if res.ok:
            return ScanRow(value, CONTRACTING, best_s, float("nan"), sim_class, lam)
    best_t = -np.inf
    if isinstance(sim, simlab.OrbitEstimate):
        f2 = np.sum(bound.rhs_many(sim.samples) ** 2, axis=1)
        eps = min(budget.eps_max, budget.eps_fraction * float(f2.min()))
        radius = max(budget.radius, 1.5 * float(np.max(np.linalg.norm(sim.samples, axis=1))))
    else:
        eps, radius = budget.eps_max, budget.radius
    region = ball_region(bound, radius, eps)
    ans = default_ansatz(bound, budget.degree_W, budget.degree_rho, region=region)
    for lam in budget.transverse_lambdas:
        try:
            res = certify(bound, ans, lam, TRANSVERSE, budget.transverse_samples, budget.grid_per_axis,
                          seed=seed, rounds=budget.rounds, region=region)
        except RegionSamplingError:
            break
        best_t = max(best_t, res.sampled_margin if res.ok else (res.failure.best_margin if res.failure else -np.inf))
        if res.ok:
            return ScanRow(value, OSCILLATING, best_s, best_t, sim_class, lam)
    return ScanRow(value, UNDETERMINED_CLASS, best_s, best_t, sim_class)


def _flip_bracket(rows: list[ScanRow]) -> tuple[float, float] | None:
    """Tightest [a, b] between a contracting and an oscillating value with only
    undetermined values strictly inside."""
    known = sorted((r for r in rows if r.classification != UNDETERMINED_CLASS), key=lambda r: r.value)
    best = None
    for lo, hi in zip(known, known[1:]):
        if lo.classification != hi.classification:
            if best is None or hi.value - lo.value < best[1] - best[0]:
                best = (lo.value, hi.value)
    return best


def bifurcation_scan(sys: DynSystem, param: str, lo: float, hi: float, steps: int = 21,
                     budget: ScanBudget | None = None, refine: int = 2, seed: int = 0,
                     jobs: int = 1) -> ScanResult:
    """Classify ``steps`` equally spaced parameter values, then bisect the flip bracket.

    Each refinement classifies the midpoint of the widest gap between evaluated
    values inside the bracket, so undetermined values already inside are not
    repeated. Bisection stops after ``refine`` midpoints.
    """
    p = sys.param(param)
    if p.lo is not None and (lo < p.lo or hi > p.hi):
        raise ValueError(f"scan range [{lo}, {hi}] outside declared range of {param}")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    values = [float(v) for v in np.linspace(lo, hi, steps)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(classify_value, [sys] * steps, [param] * steps, values,
                                 [budget] * steps, [seed] * steps))
    else:
        rows = [classify_value(sys, param, float(v), budget, seed) for v in values]
    for r in rows:
        logger.info("scan %s=%.4f: %s (sim %s)", param, r.value, r.classification, r.sim_class)
    bracket = _flip_bracket(rows)
    for _ in range(refine):
        if bracket is None:
            break
        inside = sorted({r.value for r in rows if bracket[0] <= r.value <= bracket[1]})
        a, b = max(zip(inside, inside[1:]), key=lambda g: g[1] - g[0])
        mid = 0.5 * (a + b)
        row = classify_value(sys, param, mid, budget, seed)
        row.stage = "bisection"
        rows.append(row)
        logger.info("scan %s=%.4f: %s (sim %s, bisection)", param, mid, row.classification, row.sim_class)
        bracket = _flip_bracket(rows)
    return ScanResult(param, rows, bracket)
