"""Interconnection checks for (transverse) contraction.

Everything here is pointwise: matrices are evaluated on a user-supplied grid
of composite states and the relevant eigenvalue or norm conditions are
checked point by point. Matrix-valued inputs may be a PolyMatrix, a constant
array, or a callable ``x -> array``.

Checks provided:

* ``hierarchical_check``: a strongly contracting system driving a
  transverse contracting one, composite metric blockdiag(alpha M1, M2).
* ``skewsym_check``: feedback whose cross blocks are skew in the given frames.
* ``bounded_feedback_check``: eigenvalue/singular-value test for weak coupling.
* ``tdd_lmi_check``: transverse differential dissipativity via a block LMI.
* ``multiplier_combination``: constant multipliers combining supply rates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .certcheck import (STRONG, TRANSVERSE, HypothesisError, MetricCertificate, _complement_bases,
                        assemble_H, evaluate_margins)
from .polycore import PolyMatrix, Polynomial, lie_derivative
from .sdpfeas import FeasibilityProblem, solve_feasibility
from .sysmodel import DynSystem, jacobian, make_system

logger = logging.getLogger(__name__)

PASS = "pass"
FAIL = "fail"
HYPOTHESES_NOT_MET = "hypotheses_not_met"

COND_LIMIT = 1e12

MatrixLike = PolyMatrix | np.ndarray | Callable


def at_points(P: MatrixLike, X) -> np.ndarray:
    """Evaluate a matrix-valued input at each row of X; returns (N, r, c).

    A 3-d array of length N is taken as already evaluated per point.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(P, PolyMatrix):
        return P.eval_many(X[:, :P.nvars] if X.shape[1] > P.nvars else X)
    if callable(P):
        return np.stack([np.atleast_2d(np.asarray(P(x), dtype=float)) for x in X])
    A = np.asarray(P, dtype=float)
    if A.ndim == 3:
        if len(A) != len(X):
            raise ValueError(f"per-point array has {len(A)} entries for {len(X)} points")
        return A
    A = np.atleast_2d(A)
    return np.broadcast_to(A, (len(X),) + A.shape)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _inverse_checked(T: np.ndarray, X: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    cond = np.linalg.cond(T)
    bad = ~np.isfinite(cond) | (cond > COND_LIMIT)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise HypothesisError(f"{what} is singular at grid point {X[i].tolist()} (cond {cond[i]:.3g})")
    return np.linalg.inv(T), float(cond.max())


# -- domain types -----------------------------------------------------------

@dataclass(frozen=True)
class GeneralizedJacobianFrame:
    """Differential coordinates z = Theta(x) dx, in which dz/dt = F(x) z with
    F = (Theta A + dTheta/dt) Theta^{-1}."""

    Theta: PolyMatrix
    A: PolyMatrix
    f: tuple[Polynomial, ...]

    @classmethod
    def from_system(cls, sys: DynSystem, Theta=None) -> GeneralizedJacobianFrame:
        if Theta is None:
            Theta = PolyMatrix.identity(sys.n, sys.nvars)
        elif not isinstance(Theta, PolyMatrix):
            Theta = PolyMatrix.constant(np.asarray(Theta, dtype=float), sys.nvars)
        if Theta.shape != (sys.n, sys.n) or Theta.nvars != sys.nvars:
            raise ValueError("frame must be n x n over the system variables")
        return cls(Theta, jacobian(sys), tuple(sys.f))

    def theta(self, X) -> np.ndarray:
        return self.Theta.eval_many(np.atleast_2d(X))

    def condition(self, X) -> np.ndarray:
        return np.linalg.cond(self.theta(X))

    def F(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        T = self.theta(X)
        Tinv, _ = _inverse_checked(T, X, "frame Theta")
        Tdot = lie_derivative(self.Theta, list(self.f)).eval_many(X)
        return (T @ self.A.eval_many(X) + Tdot) @ Tinv

    def Fs(self, X) -> np.ndarray:
        return _sym(self.F(X))


@dataclass(frozen=True)
class IOLinearization:
    """dx' = A dx + B dw, dy = C dx + D dw."""

    A: MatrixLike
    B: MatrixLike
    C: MatrixLike | None = None
    D: MatrixLike | None = None

    def blocks(self, X) -> tuple[np.ndarray, ...]:
        A, B = at_points(self.A, X), at_points(self.B, X)
        N, n, _ = A.shape
        m = B.shape[2]
        C = at_points(self.C, X) if self.C is not None else np.zeros((N, 0, n))
        D = at_points(self.D, X) if self.D is not None else np.zeros((N, C.shape[1], m))
        p = C.shape[1]
        if A.shape[1:] != (n, n) or B.shape[1:] != (n, m) or C.shape[1:] != (p, n) or D.shape[1:] != (p, m):
            raise ValueError(f"inconsistent linearization shapes A{A.shape[1:]} B{B.shape[1:]} "
                             f"C{C.shape[1:]} D{D.shape[1:]}")
        return A, B, C, D

    @classmethod
    def from_polynomials(cls, f: Sequence[Polynomial], g: Sequence[Polynomial], n: int) -> IOLinearization:
        """Differentiate f(x, w), g(x, w) whose variables are (x_1..x_n, w_1..w_m)."""
        nv = f[0].nvars
        A = PolyMatrix([[fi.diff(j) for j in range(n)] for fi in f])
        B = PolyMatrix([[fi.diff(j) for j in range(n, nv)] for fi in f])
        C = PolyMatrix([[gi.diff(j) for j in range(n)] for gi in g]) if g else None
        D = PolyMatrix([[gi.diff(j) for j in range(n, nv)] for gi in g]) if g else None
        return cls(A, B, C, D)


@dataclass(frozen=True)
class SupplyRate:
    """sigma = dx' H dx + 2 dx' N du + du' R du."""

    H: MatrixLike
    N: MatrixLike
    R: MatrixLike

    def blocks(self, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        H, Nx, R = at_points(self.H, X), at_points(self.N, X), at_points(self.R, X)
        n, m = H.shape[1], R.shape[1]
        if H.shape[1:] != (n, n) or R.shape[1:] != (m, m) or Nx.shape[1:] != (n, m):
            raise ValueError(f"inconsistent supply-rate shapes H{H.shape[1:]} N{Nx.shape[1:]} R{R.shape[1:]}")
        return _sym(H), Nx, _sym(R)

    def matrix(self, X) -> np.ndarray:
        """The (n+m) x (n+m) symmetric form at each point."""
        H, Nx, R = self.blocks(X)
        top = np.concatenate([H, Nx], axis=2)
        bot = np.concatenate([np.swapaxes(Nx, 1, 2), R], axis=2)
        return np.concatenate([top, bot], axis=1)

    def value(self, x, dx, du) -> float:
        z = np.concatenate([np.atleast_1d(dx), np.atleast_1d(du)])
        return float(z @ self.matrix(np.atleast_2d(x))[0] @ z)

    def check_signs(self, X, tol: float = 1e-12) -> None:
        """H <= 0 and R >= 0 at every point, else HypothesisError."""
        X = np.atleast_2d(X)
        H, _, R = self.blocks(X)
        hmax = np.linalg.eigvalsh(H)[:, -1] if H.shape[1] else np.zeros(len(X))
        rmin = np.linalg.eigvalsh(R)[:, 0] if R.shape[1] else np.zeros(len(X))
        if np.any(hmax > tol):
            i = int(np.argmax(hmax))
            raise HypothesisError(f"supply rate H is not negative semidefinite at {X[i].tolist()} "
                                  f"(largest eigenvalue {hmax[i]:.3g})")
        if np.any(rmin < -tol):
            i = int(np.argmin(rmin))
            raise HypothesisError(f"supply rate R is not positive semidefinite at {X[i].tolist()} "
                                  f"(smallest eigenvalue {rmin[i]:.3g})")

    @classmethod
    def identity_x(cls, n: int, m: int = 0, scale: float = -1.0) -> SupplyRate:
        """scale * |dx|^2, the default target is scale = -1."""
        return cls(scale * np.eye(n), np.zeros((n, m)), np.zeros((m, m)))

    @classmethod
    def from_output_form(cls, lin: IOLinearization, S, X=None) -> SupplyRate:
        """Pull back a form in (dy, dw) to (dx, dw) using dy = C dx + D dw.

        Constant linearizations only (the result is a constant SupplyRate).
        """
        X = np.zeros((1, 1)) if X is None else X
        _, B, C, D = (b[0] for b in lin.blocks(X))
        n, m = B.shape
        T = np.block([[C, D], [np.zeros((m, n)), np.eye(m)]])
        Phi = T.T @ np.asarray(S, dtype=float) @ T
        Phi = 0.5 * (Phi + Phi.T)
        return cls(Phi[:n, :n], Phi[:n, n:], Phi[n:, n:])


def sector_form(alpha: float, beta: float, first: int, second: int, dim: int) -> np.ndarray:
    """Matrix of (z[first] - alpha z[second]) (beta z[second] - z[first]) on R^dim."""
    u = np.zeros(dim)
    v = np.zeros(dim)
    u[first] += 1.0
    u[second] -= alpha
    v[second] += beta
    v[first] -= 1.0
    M = np.outer(u, v)
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class MultiplierSet:
    taus: tuple[float, ...]

    def __post_init__(self):
        if any(not (t >= 0) for t in self.taus):
            raise ValueError("multipliers must be nonnegative")


# -- hierarchical composition -----------------------------------------------

@dataclass
class HierarchicalReport:
    passed: bool
    alpha: float | None
    worst_margin: float
    worst_point: np.ndarray
    n_points: int
    alphas_tried: int
    message: str = ""

    def as_dict(self) -> dict:
        return {"check": "hierarchical", "verdict": PASS if self.passed else FAIL,
                "alpha": self.alpha, "worst_margin": self.worst_margin,
                "worst_point": self.worst_point.tolist(), "n_points": self.n_points,
                "alphas_tried": self.alphas_tried, "message": self.message}


def cascade(sys1: DynSystem, sys2: DynSystem) -> DynSystem:
    """Series system x1' = f1(x1), x2' = f2(x2, x1).

    Parameters of ``sys2`` named after states of ``sys1`` become the driving
    signal; every other parameter must already be bound.
    """
    if not sys1.is_bound:
        raise HypothesisError(f"driving system {sys1.name} has unbound parameters")
    n1, n2 = sys1.n, sys2.n
    nv = n1 + n2
    pos2 = list(range(n1, nv))
    for p in sys2.params:
        if p.name not in sys1.states:
            raise HypothesisError(f"parameter {p.name!r} of {sys2.name} is neither bound nor a state of {sys1.name}")
        pos2.append(sys1.states.index(p.name))
    f = [fi.embed(nv, range(n1)) for fi in sys1.f] + [fi.embed(nv, pos2) for fi in sys2.f]
    states = tuple(sys1.states) + tuple(sys2.states)
    if len(set(states)) != len(states):
        raise HypothesisError("driving and driven systems share state names")
    return make_system(f"{sys1.name}>{sys2.name}", states, (), f)


def _embed_matrix(W: PolyMatrix, nv: int, positions, offset: int, n: int) -> PolyMatrix:
    zero = Polynomial.zero(nv)
    rows = [[zero] * n for _ in range(n)]
    for i in range(W.rows):
        for j in range(W.cols):
            rows[offset + i][offset + j] = W[i, j].embed(nv, positions)
    return PolyMatrix(rows, symmetric=True)


def hierarchical_check(sys1: DynSystem, cert1: MetricCertificate, sys2: DynSystem,
                       cert2: MetricCertificate, points, margin: float = 1e-6,
                       alpha_range: tuple[float, float] = (1.0, 1e6), n_alpha: int = 25,
                       bisect_steps: int = 30) -> HierarchicalReport:
    """Search alpha so that blockdiag(W1/alpha, W2) is a transverse certificate of the cascade.

    ``sys2`` depends on x1 through parameters named after the states of
    ``sys1``; ``cert2`` may depend on x1 the same way. ``points`` are composite
    states (x1, x2), meant to sample x1 near the equilibrium of ``sys1``.
    Negativity is required on directions orthogonal to (0, f2), the limit of
    the composite transversality subspace as f1 vanishes. Both sub-certificates are first checked at the
    corresponding projections of the points. The H matrix of the cascade is
    affine in 1/alpha, so each trial alpha is cheap; alpha is scanned
    log-spaced and the first passing value is bisected down against the last
    failing one. A failure means "not certified", never a refutation.
    """
    if cert1.mode != STRONG:
        raise HypothesisError("driving system needs a strong certificate")
    if cert2.mode != TRANSVERSE:
        raise HypothesisError("driven system needs a transverse certificate")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n1, n2 = sys1.n, sys2.n
    if X.shape[1] != n1 + n2:
        raise ValueError(f"composite points need {n1 + n2} coordinates")
    comp = cascade(sys1, sys2)
    nv = n1 + n2
    pos2 = list(range(n1, nv)) + [sys1.states.index(p.name) for p in sys2.params]
    X1 = X[:, :n1]
    X2 = np.concatenate([X[:, n1:], X[:, [sys1.states.index(p.name) for p in sys2.params]]], axis=1) \
        if sys2.params else X[:, n1:]

    m1 = evaluate_margins(sys1, cert1, X1)
    if np.any(m1["lmi"] >= 0) or np.any(m1["pd"] > 0):
        raise HypothesisError(f"certificate of {sys1.name} does not verify at the grid projections")
    m2 = evaluate_margins(sys2, cert2, X2)
    if np.any(m2["lmi"] >= 0) or np.any(m2["pd"] > 0) or np.any(m2["rho"] < 0):
        raise HypothesisError(f"certificate of {sys2.name} does not verify at the grid projections")

    lam = min(cert1.lam, cert2.lam)
    W1 = _embed_matrix(cert1.W, nv, range(n1), 0, nv)
    W2 = _embed_matrix(cert2.W, nv, pos2, n1, nv)
    eps = min(cert1.eps_pd, cert2.eps_pd)
    Ha = assemble_H(comp, MetricCertificate(W1, None, lam, eps, STRONG)).eval_many(X)
    Hb = assemble_H(comp, MetricCertificate(W2, None, lam, eps, STRONG)).eval_many(X)
    # x1 converges to its equilibrium, where f1 = 0: the transversality
    # subspace is all of x1-space times the complement of f2
    F = comp.rhs_many(X)
    F[:, :n1] = 0.0
    if np.any(np.linalg.norm(F, axis=1) == 0):
        raise HypothesisError("grid contains an equilibrium of the driven system")
    P = _complement_bases(F)
    Pa = np.einsum("nia,nij,njb->nab", P, Ha, P)
    Pb = np.einsum("nia,nij,njb->nab", P, Hb, P)

    def worst(alpha):
        lm = np.linalg.eigvalsh(Pa / alpha + Pb)[:, -1]
        i = int(np.argmax(lm))
        return float(lm[i]), i

    alphas = np.logspace(np.log10(alpha_range[0]), np.log10(alpha_range[1]), n_alpha)
    prev = None
    best = (np.inf, 0, None)
    for k, a in enumerate(alphas):
        w, i = worst(a)
        if w < best[0]:
            best = (w, i, a)
        if w <= -margin:
            lo, hi = (prev, a) if prev is not None else (None, a)
            if lo is not None:
                for _ in range(bisect_steps):
                    mid = np.sqrt(lo * hi)
                    if worst(mid)[0] <= -margin:
                        hi = mid
                    else:
                        lo = mid
            w, i = worst(hi)
            return HierarchicalReport(True, float(hi), w, X[i], len(X), k + 1)
        prev = a
    w, i, a = best
    return HierarchicalReport(False, float(a), w, X[i], len(X), n_alpha,
                              f"no alpha in [{alpha_range[0]:g}, {alpha_range[1]:g}] reaches margin {margin:g}")


# -- skew-symmetric feedback ------------------------------------------------

@dataclass
class SkewReport:
    passed: bool
    residual: float
    worst_point: np.ndarray
    max_condition: float
    tol: float

    def as_dict(self) -> dict:
        return {"check": "skewsym", "verdict": PASS if self.passed else FAIL, "residual": self.residual,
                "worst_point": self.worst_point.tolist(), "max_condition": self.max_condition, "tol": self.tol}


def skewsym_check(Theta1: MatrixLike, Theta2: MatrixLike, J12: MatrixLike, J21: MatrixLike,
                  k: float, points, tol: float = 1e-8) -> SkewReport:
    """G12 = Theta1 J12 Theta2^{-1} must equal -k G21' with G21 = Theta2 J21 Theta1^{-1}.

    J12 = df1/dx2 and J21 = df2/dx1, all evaluated at composite points.
    """
    if not k > 0:
        raise ValueError("k must be positive")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    T1, T2 = at_points(Theta1, X), at_points(Theta2, X)
    T1inv, c1 = _inverse_checked(T1, X, "frame Theta1")
    T2inv, c2 = _inverse_checked(T2, X, "frame Theta2")
    G12 = T1 @ at_points(J12, X) @ T2inv
    G21 = T2 @ at_points(J21, X) @ T1inv
    res = np.linalg.norm(G12 + k * np.swapaxes(G21, 1, 2), axis=(1, 2))
    i = int(np.argmax(res))
    return SkewReport(bool(res[i] <= tol), float(res[i]), X[i], max(c1, c2), tol)


# -- bounded feedback -------------------------------------------------------

@dataclass
class BoundedFeedbackReport:
    verdict: str
    worst_index: int
    worst_triple: tuple[float, float, float]
    side_residual: float
    phase_decoupled: bool

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def as_dict(self) -> dict:
        return {"check": "bounded_feedback", "verdict": self.verdict, "worst_index": self.worst_index,
                "lambda2_F1s": self.worst_triple[0], "lambda_max_F2s": self.worst_triple[1],
                "sigma_G": self.worst_triple[2], "side_residual": self.side_residual,
                "phase_decoupled": self.phase_decoupled}


def bounded_feedback_check(F1s, F2s, Gs, theta_f, tol: float = 1e-8) -> BoundedFeedbackReport:
    """Per point: sigma_max(Gs)^2 < lambda_2(F1s) * lambda_max(F2s), gated on Gs' Theta f = 0.

    Arrays are stacked per grid point: F1s (N, n1, n1), F2s (N, n2, n2),
    Gs (N, n1, n2), theta_f (N, n1). Both eigenvalues are negative for valid
    inputs, so their product is the tolerable squared coupling gain.
    """
    F1s, F2s, Gs = (np.asarray(a, dtype=float) for a in (F1s, F2s, Gs))
    if F1s.ndim == 2:
        F1s, F2s, Gs = F1s[None], F2s[None], Gs[None]
    tf = np.atleast_2d(np.asarray(theta_f, dtype=float))
    N = len(F1s)
    if not (len(F2s) == len(Gs) == len(tf) == N):
        raise ValueError("all inputs need one entry per grid point")
    e1 = np.linalg.eigvalsh(_sym(F1s))
    e2 = np.linalg.eigvalsh(_sym(F2s))
    if np.any(e1[:, -1] > tol) or np.any(e1[:, -2] >= 0) or np.any(e2[:, -1] >= 0):
        raise HypothesisError("need F1s <= 0 with transverse negativity and F2s < 0 at every point")
    lam2 = e1[:, -2]
    lmax2 = e2[:, -1]
    sig = np.linalg.norm(Gs, ord=2, axis=(1, 2))
    side = np.linalg.norm(np.einsum("nij,ni->nj", Gs, tf), axis=1)
    decoupled = bool(np.all((np.linalg.norm(Gs, axis=(1, 2)) <= tol) | (np.linalg.norm(tf, axis=1) <= tol)))
    slack = lam2 * lmax2 - sig ** 2
    i = int(np.argmin(slack))
    triple = (float(lam2[i]), float(lmax2[i]), float(sig[i]))
    if side.max() > tol:
        j = int(np.argmax(side))
        return BoundedFeedbackReport(HYPOTHESES_NOT_MET, j, (float(lam2[j]), float(lmax2[j]), float(sig[j])),
                                     float(side.max()), decoupled)
    return BoundedFeedbackReport(PASS if slack[i] > 0 else FAIL, i, triple, float(side.max()), decoupled)


# -- transverse differential dissipativity ----------------------------------

@dataclass
class TDDReport:
    passed: bool
    worst_margin: float
    worst_point: np.ndarray
    margins: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {"check": "tdd", "verdict": PASS if self.passed else FAIL, "worst_margin": self.worst_margin,
                "worst_point": self.worst_point.tolist(), "n_points": int(len(self.margins))}


def _half_factor(H: np.ndarray) -> np.ndarray:
    """L with L L' = -H for negative semidefinite H (columns for nonzero eigenvalues)."""
    vals, vecs = np.linalg.eigh(-H)
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)[:, None, :]


def tdd_blocks(A, B, W, Wdot, rho, f, H, N, R) -> np.ndarray:
    """Stacked block matrices [[X, Y, W L], [Y', R, 0], [L'W, 0, I]] per point.

    X = -W A' - A W + Wdot + rho f f' and Y = -B + W N; L L' = -H. The
    Schur complement of the identity corner is [[X + W H W, Y], [Y', R]],
    the transverse dissipation form itself, so the block is PSD exactly when
    the dissipation inequality holds for every (eta, du).
    """
    Npts, n, _ = A.shape
    m = B.shape[2]
    X = -W @ np.swapaxes(A, 1, 2) - A @ W + Wdot + rho[:, None, None] * np.einsum("ni,nj->nij", f, f)
    Y = -B + W @ N
    L = _half_factor(_sym(H))
    WL = W @ L
    out = np.zeros((Npts, 2 * n + m, 2 * n + m))
    out[:, :n, :n] = _sym(X)
    out[:, :n, n:n + m] = Y
    out[:, n:n + m, :n] = np.swapaxes(Y, 1, 2)
    out[:, n:n + m, n:n + m] = _sym(R)
    out[:, :n, n + m:] = WL
    out[:, n + m:, :n] = np.swapaxes(WL, 1, 2)
    out[:, n + m:, n + m:] = np.eye(n)
    return out


def tdd_lmi_check(lin: IOLinearization, W: MatrixLike, supply: SupplyRate, points,
                  rho: MatrixLike | None = None, f: Sequence[Polynomial] | MatrixLike | None = None,
                  Wdot: MatrixLike | None = None, margin: float = 0.0) -> TDDReport:
    """Pointwise transverse differential dissipativity of (lin, W, rho) w.r.t. ``supply``.

    ``f`` is the drift (polynomials or a vector-valued input); when W is a
    PolyMatrix and ``Wdot`` is omitted it is computed as the Lie derivative
    along ``f``. Without ``rho`` the check is the plain (non-transverse) one.
    The supply-rate sign conditions are checked on the same points first.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    supply.check_signs(X)
    A, B, _, _ = lin.blocks(X)
    Hs, Ns, Rs = supply.blocks(X)
    n = A.shape[1]
    if Hs.shape[1] != n or Rs.shape[1] != B.shape[2]:
        raise ValueError("supply rate and linearization dimensions differ")
    if f is None:
        F = np.zeros((len(X), n))
    elif isinstance(f, (list, tuple)) and f and isinstance(f[0], Polynomial):
        F = np.stack([fi.eval_many(X[:, :fi.nvars]) for fi in f], axis=1)
    else:
        F = at_points(f, X).reshape(len(X), n)
    Wx = at_points(W, X)
    if Wdot is None:
        if isinstance(W, PolyMatrix) and isinstance(f, (list, tuple)) and f:
            Wd = lie_derivative(W, list(f)).eval_many(X[:, :W.nvars])
        else:
            Wd = np.zeros_like(Wx)
    else:
        Wd = at_points(Wdot, X)
    r = np.zeros(len(X)) if rho is None else at_points(rho, X).reshape(len(X))
    if np.any(r < 0):
        raise HypothesisError("multiplier rho must be nonnegative")
    blocks = tdd_blocks(A, B, Wx, Wd, r, F, Hs, Ns, Rs)
    lmin = np.linalg.eigvalsh(blocks)[:, 0]
    i = int(np.argmin(lmin))
    return TDDReport(bool(lmin[i] >= margin), float(lmin[i]), X[i], lmin)


# -- multiplier search ------------------------------------------------------

@dataclass
class MultiplierResult:
    feasible: bool
    multipliers: MultiplierSet | None
    best_margin: float
    best_taus: tuple[float, ...]
    status: str

    def as_dict(self) -> dict:
        return {"check": "multipliers", "verdict": PASS if self.feasible else FAIL,
                "taus": list(self.best_taus), "best_margin": self.best_margin, "status": self.status}


def multiplier_residual(sigmas: Sequence[SupplyRate], target: SupplyRate, taus, points) -> np.ndarray:
    """Smallest eigenvalue of target - sum tau_i sigma_i at each point."""
    X = np.atleast_2d(points)
    M = target.matrix(X).copy()
    for t, s in zip(taus, sigmas):
        M = M - t * s.matrix(X)
    return np.linalg.eigvalsh(M)[:, 0]


def multiplier_combination(sigmas: Sequence[SupplyRate], target: SupplyRate | None = None, points=None,
                           margin: float = 1e-9, tau_max: float = 1e4, seed: int = 0) -> MultiplierResult:
    """Find tau >= 0 with target - sum tau_i sigma_i positive definite at every point.

    The default target is -|dx|^2. The search maximizes the smallest
    eigenvalue over tau in [0, tau_max]; success needs it above ``margin``.
    """
    if not sigmas:
        raise ValueError("need at least one supply rate")
    X = np.zeros((1, 1)) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    mats = [s.matrix(X) for s in sigmas]
    if target is None:
        H0, _, R0 = sigmas[0].blocks(X)
        target = SupplyRate.identity_x(H0.shape[1], R0.shape[1])
    T = target.matrix(X)
    if any(M.shape != T.shape for M in mats):
        raise ValueError("all supply rates must act on the same (dx, du) dimensions")
    p = len(sigmas)
    blocks = (T, -np.stack(mats, axis=1))
    prob = FeasibilityProblem(p, blocks=[blocks], box=(np.zeros(p), np.full(p, tau_max)), target_margin=margin)
    res = solve_feasibility(prob, seed=seed)
    v = res.v if res.v is not None else res.best_v
    taus = tuple(float(t) for t in np.clip(v, 0.0, None)) if v is not None else (0.0,) * p
    best = float(multiplier_residual(sigmas, target, taus, X).min())
    ok = best >= margin
    logger.info("multiplier search: status %s, margin %.3g, taus %s", res.status, best, taus)
    return MultiplierResult(ok, MultiplierSet(taus) if ok else None, best, taus, res.status)


# -- building interconnections ----------------------------------------------

def substitute(p: Polynomial, var: int, q: Polynomial) -> Polynomial:
    """Replace variable ``var`` of p by the polynomial q (same variable space)."""
    out = Polynomial.zero(p.nvars)
    powers = {0: Polynomial.constant(p.nvars, 1.0)}
    for exp, c in p.items():
        k = exp[var]
        if k not in powers:
            powers[k] = q ** k
        rest = list(exp)
        rest[var] = 0
        out = out + Polynomial.monomial(rest, c) * powers[k]
    return out


def feedback_system(sys1: DynSystem, sys2: DynSystem, inputs: dict[str, str] | None = None,
                    name: str | None = None) -> DynSystem:
    """States (x1, x2); parameters become coupling signals.

    A parameter of either system named after a state of the other is wired to
    that state. ``inputs`` maps further parameter names to polynomial
    expressions in the composite state names. Remaining parameters stay free.
    """
    from .polycore import parse_polynomial
    inputs = dict(inputs or {})
    states = tuple(sys1.states) + tuple(sys2.states)
    if len(set(states)) != len(states):
        raise ValueError("interconnected systems share state names")
    free = []
    for s in (sys1, sys2):
        for p in s.params:
            if p.name not in states and p.name not in inputs and p.name not in {q.name for q in free}:
                free.append(p)
    names = states + tuple(p.name for p in free)
    nv = len(names)
    exprs = {k: parse_polynomial(v, names) for k, v in inputs.items()}
    f = []
    for s in (sys1, sys2):
        own = [names.index(x) for x in s.states]
        # parameters first go to fresh slots, then get substituted
        extra = nv
        positions = list(own)
        wired = []
        for p in s.params:
            if p.name in states and p.name not in s.states:
                positions.append(names.index(p.name))
            elif p.name in exprs:
                positions.append(extra)
                wired.append((extra, exprs[p.name]))
                extra += 1
            else:
                positions.append(names.index(p.name))
        total = extra
        for fi in s.f:
            g = fi.embed(total, positions)
            for slot, q in wired:
                g = substitute(g, slot, q.embed(total, range(nv)))
            for slot, _ in reversed(wired):
                g = g.bind(slot, 0.0)
            f.append(g)
    unused = set(inputs) - {p.name for s in (sys1, sys2) for p in s.params}
    if unused:
        raise ValueError(f"inputs name unknown parameters: {sorted(unused)}")
    return make_system(name or f"{sys1.name}+{sys2.name}", states, free, f)
