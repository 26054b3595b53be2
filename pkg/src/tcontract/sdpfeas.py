"""Feasibility of finitely many affine matrix inequalities.

Solves

    maximize t  subject to  F0_i + sum_k v_k F_ik  >=  t I   (every i)
                            lo <= v <= hi

with a primal-dual interior-point method (HKM direction, Mehrotra
predictor-corrector, infeasible start). LMIs of equal size are stacked and
handled with batched numpy linear algebra, so thousands of small per-sample
blocks cost little more than one large one.

The solver never claims infeasibility: ``infeasible_evidence`` just means the
best margin found stayed below the target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE_EVIDENCE = "infeasible_evidence"
MAX_ITERS = "max_iters"


@dataclass
class AffineLMI:
    """F0 + sum_k v[idx_k] * F_k  >= 0."""

    constant: np.ndarray
    coeffs: list[tuple[int, np.ndarray]] = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        self.constant = np.atleast_2d(np.asarray(self.constant, dtype=float))
        d = self.constant.shape[0]
        if self.constant.shape != (d, d) or not np.allclose(self.constant, self.constant.T, atol=1e-12 * (1 + np.abs(self.constant).max())):
            raise ValueError("LMI constant term must be a symmetric square matrix")
        coeffs = []
        for idx, F in self.coeffs:
            F = np.atleast_2d(np.asarray(F, dtype=float))
            if F.shape != (d, d):
                raise ValueError("all LMI matrices must have the same dimension")
            if not np.allclose(F, F.T, atol=1e-12 * (1 + np.abs(F).max())):
                raise ValueError("LMI coefficient matrices must be symmetric")
            coeffs.append((int(idx), F))
        self.coeffs = coeffs

    @property
    def dim(self) -> int:
        return self.constant.shape[0]

    def evaluate(self, v) -> np.ndarray:
        S = self.constant.copy()
        for idx, F in self.coeffs:
            S += v[idx] * F
        return S


class FeasibilityProblem:
    """Decision dimension, LMIs, decision box and target margin.

    LMIs can be given one by one (``lmis``) or pre-stacked by size as
    ``blocks = [(F0 (N,d,d), F (N,nvars,d,d)), ...]``; either view is derived
    from the other on demand.
    """

    def __init__(self, nvars: int, lmis: Sequence[AffineLMI] | None = None, box=None,
                 target_margin: float = 0.0, blocks=None):
        self.nvars = int(nvars)
        if (lmis is None) == (blocks is None):
            raise ValueError("give exactly one of lmis or blocks")
        if box is None:
            box = (np.full(self.nvars, -1e4), np.full(self.nvars, 1e4))
        lo, hi = (np.asarray(b, dtype=float).reshape(self.nvars) for b in box)
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(lo >= hi):
            raise ValueError("decision box must be finite with lo < hi")
        self.box = (lo, hi)
        if not target_margin >= 0:
            raise ValueError("target_margin must be nonnegative")
        self.target_margin = float(target_margin)
        self._lmis = None if lmis is None else list(lmis)
        self._blocks = None
        if lmis is not None:
            for lmi in self._lmis:
                for idx, _ in lmi.coeffs:
                    if not 0 <= idx < self.nvars:
                        raise ValueError(f"decision index {idx} out of range for {self.nvars} variables")
        else:
            self._blocks = []
            offset = 0
            for F0, F in blocks:
                F0 = np.asarray(F0, dtype=float)
                F = np.asarray(F, dtype=float)
                N, d, _ = F0.shape
                if F.shape != (N, self.nvars, d, d):
                    raise ValueError(f"block coefficient array has shape {F.shape}, expected {(N, self.nvars, d, d)}")
                self._blocks.append((np.arange(offset, offset + N), F0, F))
                offset += N

    @property
    def lmis(self) -> list[AffineLMI]:
        if self._lmis is None:
            out = []
            for _, F0, F in self._blocks:
                for s in range(len(F0)):
                    out.append(AffineLMI(F0[s], [(k, F[s, k]) for k in range(self.nvars) if np.any(F[s, k])]))
            self._lmis = out
        return self._lmis

    @property
    def n_lmis(self) -> int:
        if self._lmis is not None:
            return len(self._lmis)
        return sum(len(ids) for ids, _, _ in self._blocks)

    def stacked(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Group LMIs by size: list of (indices, F0 (N,d,d), F (N,nvars,d,d))."""
        if self._blocks is not None:
            return self._blocks
        groups: dict[int, list[int]] = {}
        for i, lmi in enumerate(self._lmis):
            groups.setdefault(lmi.dim, []).append(i)
        out = []
        for d in sorted(groups):
            ids = np.array(groups[d])
            F0 = np.stack([self._lmis[i].constant for i in ids])
            F = np.zeros((len(ids), self.nvars, d, d))
            for row, i in enumerate(ids):
                for idx, Fk in self._lmis[i].coeffs:
                    F[row, idx] += Fk
            out.append((ids, F0, F))
        self._blocks = out
        return out


@dataclass
class FeasResult:
    status: str
    v: np.ndarray | None
    achieved_margin: float
    iterations: int
    best_v: np.ndarray | None = None
    worst_lmi: int | None = None

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def _check_finite(prob: FeasibilityProblem) -> None:
    for _, F0, F in prob.stacked():
        if not (np.all(np.isfinite(F0)) and np.all(np.isfinite(F))):
            raise ValueError("NaN or infinite entry in LMI data")


class _Stack:
    """Batched evaluation of all LMI blocks."""

    def __init__(self, prob: FeasibilityProblem):
        self.groups = prob.stacked()
        self.nvars = prob.nvars
        self.n = sum(len(ids) for ids, _, _ in self.groups)
        self.total_dim = sum(F0.shape[0] * F0.shape[1] for _, F0, _ in self.groups)

    def slacks(self, v: np.ndarray, t: float):
        out = []
        for _, F0, F in self.groups:
            d = F0.shape[1]
            out.append(F0 + np.einsum("k,nkij->nij", v, F) - t * np.eye(d)[None])
        return out

    def min_eigs(self, v: np.ndarray) -> np.ndarray:
        lam = np.empty(self.n)
        for (ids, _, _), S in zip(self.groups, self.slacks(v, 0.0)):
            lam[ids] = np.linalg.eigvalsh(S)[:, 0]
        return lam


# -- primal-dual interior point --------------------------------------------
#
# The max-t problem is the dual of a standard-form SDP:
#
#     max b'y   s.t.  S = C - sum_i y_i A_i  >= 0,       y = (v, t), b = e_t
#
# with one semidefinite block per LMI (C = F0, A_v = -F_v, A_t = I) and two
# scalar blocks per decision variable for the box. Iterates follow the HKM
# direction with a Mehrotra predictor-corrector and an infeasible start.


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest a with X + a dX >= 0 (X positive definite), capped at 1e12."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        # iterate lost definiteness to rounding; refuse to move
        return 0.0
    Li = np.linalg.inv(L)
    w = np.linalg.eigvalsh(_sym(Li @ dX @ np.swapaxes(Li, 1, 2)))[:, 0]
    lo = float(w.min())
    return 1e12 if lo >= 0 else -1.0 / lo


class _PD:
    def __init__(self, stack: _Stack, lo: np.ndarray, hi: np.ndarray):
        K = stack.nvars
        self.K = K
        self.C, self.A = [], []
        for _, F0, F in stack.groups:
            N, d = F0.shape[0], F0.shape[1]
            Av = np.empty((N, d * d, K + 1))
            Av[:, :, :K] = -F.reshape(N, K, d * d).transpose(0, 2, 1)
            Av[:, :, K] = np.eye(d).ravel()[None, :]
            self.C.append(F0)
            self.A.append(Av)
        # box blocks: v - lo >= 0 and hi - v >= 0
        self.c_lp = np.concatenate([-lo, hi])
        self.sign_lp = np.concatenate([-np.ones(K), np.ones(K)])
        self.b = np.zeros(K + 1)
        self.b[K] = 1.0
        self.nu = stack.total_dim + 2 * K

    def op(self, X, x_lp) -> np.ndarray:
        """A(X): inner products of X with every A_i."""
        out = np.zeros(self.K + 1)
        for Av, Xk in zip(self.A, X):
            N = Xk.shape[0]
            out += Xk.reshape(N, -1).ravel() @ Av.reshape(-1, self.K + 1)
        out[:self.K] += self.sign_lp[:self.K] * x_lp[:self.K] + self.sign_lp[self.K:] * x_lp[self.K:]
        return out

    def adj(self, y) -> tuple[list, np.ndarray]:
        """A*(y) = sum_i y_i A_i, per block."""
        out = []
        for Av, C in zip(self.A, self.C):
            N, d = C.shape[0], C.shape[1]
            out.append((Av @ y).reshape(N, d, d))
        v = y[:self.K]
        return out, self.sign_lp * np.concatenate([v, v])

    def schur(self, X, Sinv, x_lp, s_lp) -> np.ndarray:
        K1 = self.K + 1
        M = np.zeros((K1, K1))
        for Av, Xk, Si in zip(self.A, X, Sinv):
            N, d = Xk.shape[0], Xk.shape[1]
            # vec(X A S^-1) = (X kron S^-1) vec(A) for row-major vec and symmetric S^-1
            kron = (Xk[:, :, None, :, None] * Si[:, None, :, None, :]).reshape(N, d * d, d * d)
            M += Av.reshape(-1, K1).T @ (kron @ Av).reshape(-1, K1)
        w = x_lp / s_lp
        M[np.arange(self.K), np.arange(self.K)] += w[:self.K] + w[self.K:]
        return _sym(M)

    def direction(self, X, S, Sinv, x_lp, s_lp, Rd, rd_lp, rp, M_fac, sigma_mu, corr=None, corr_lp=None):
        Hs = []
        for k, (Xk, Si, R) in enumerate(zip(X, Sinv, Rd)):
            H = sigma_mu * Si - Xk - Xk @ R @ Si
            if corr is not None:
                H = H - corr[k] @ Si
            Hs.append(H)
        h_lp = sigma_mu / s_lp - x_lp - x_lp * rd_lp / s_lp
        if corr_lp is not None:
            h_lp = h_lp - corr_lp / s_lp
        r = rp - self.op(Hs, h_lp)
        dy = M_fac.d * scipy.linalg.cho_solve(M_fac.fac, M_fac.d * r)
        Ady, Ady_lp = self.adj(dy)
        dS = [R - a for R, a in zip(Rd, Ady)]
        dX = [_sym(H + Xk @ a @ Si) for H, Xk, a, Si in zip(Hs, X, Ady, Sinv)]
        ds_lp = rd_lp - Ady_lp
        dx_lp = h_lp + x_lp * Ady_lp / s_lp
        return dX, dy, dS, dx_lp, ds_lp


def _lp_step(x, dx) -> float:
    neg = dx < 0
    return float(np.min(-x[neg] / dx[neg])) if np.any(neg) else 1e12


def solve_feasibility(prob: FeasibilityProblem, seed: int = 0, max_iters: int = 100,
                      gap_tol: float = 1e-8, stop_margin: float | None = None) -> FeasResult:
    """Maximize the common margin t; feasible iff t >= prob.target_margin.

    ``stop_margin`` allows returning as soon as a point with margin above it is
    found (the result is still re-checked against the target). The method is
    deterministic; ``seed`` is accepted for interface compatibility.
    """
    _check_finite(prob)
    lo, hi = prob.box
    if prob.n_lmis == 0:
        v = np.clip(np.zeros(prob.nvars), lo, hi)
        return FeasResult(FEASIBLE, v, np.inf, 0, v)
    stack = _Stack(prob)
    pd = _PD(stack, lo, hi)
    K = prob.nvars

    # infeasible start: identity-like primal and dual blocks scaled to the data
    X, S = [], []
    for C, Av in zip(pd.C, pd.A):
        N, d = C.shape[0], C.shape[1]
        norm = 1.0 + np.maximum(np.linalg.norm(C.reshape(N, -1), axis=1), np.abs(Av).max(axis=(1, 2)) * d)
        X.append(np.broadcast_to(np.eye(d), (N, d, d)).copy())
        S.append(norm[:, None, None] * np.eye(d)[None])
    x_lp = np.ones(2 * K)
    s_lp = 1.0 + np.abs(pd.c_lp)
    y = np.zeros(K + 1)
    y[:K] = 0.5 * (lo + hi)
    y[K] = float(stack.min_eigs(y[:K]).min()) - 1.0

    best_t, best_v = -np.inf, None
    converged = False
    it = 0
    scale_b = 1.0 + float(np.abs(pd.c_lp).max())
    while it < max_iters:
        v_try = np.clip(y[:K], lo, hi)
        t_try = float(stack.min_eigs(v_try).min())
        if t_try > best_t:
            best_t, best_v = t_try, v_try
        if stop_margin is not None and best_t >= stop_margin:
            converged = True
            break
        it += 1
        Ay, Ay_lp = pd.adj(y)
        Rd = [C - a - Sk for C, a, Sk in zip(pd.C, Ay, S)]
        rd_lp = pd.c_lp - Ay_lp - s_lp
        rp = pd.b - pd.op(X, x_lp)
        gap = sum(float(np.sum(Xk * Sk)) for Xk, Sk in zip(X, S)) + float(x_lp @ s_lp)
        mu = gap / pd.nu
        pobj = sum(float(np.sum(C * Xk)) for C, Xk in zip(pd.C, X)) + float(pd.c_lp @ x_lp)
        dobj = float(y[K])
        dinf = (sum(float(np.sum(R * R)) for R in Rd) + float(rd_lp @ rd_lp)) ** 0.5
        pinf = float(np.linalg.norm(rp))
        logger.debug("sdpfeas it=%d t=%.6e best=%.6e pobj=%.6e mu=%.2e pinf=%.1e dinf=%.1e",
                     it, dobj, best_t, pobj, mu, pinf, dinf)
        rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        if rel_gap < gap_tol and pinf < 1e-8 and dinf < 1e-8 * scale_b:
            converged = True
            break
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                Sinv = [_sym(np.linalg.inv(Sk)) for Sk in S]
                M = pd.schur(X, Sinv, x_lp, s_lp)
                d = 1.0 / np.sqrt(np.maximum(np.diag(M), 1e-300))
                Ms = M * d[:, None] * d[None, :]
            Ms[np.diag_indices_from(Ms)] += 1e-14
            fac_s = scipy.linalg.cho_factor(Ms)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            logger.debug("sdpfeas: Schur complement lost definiteness at it=%d", it)
            break
        # cho_solve on the equilibrated system, undone around the call
        fac = _Equilibrated(fac_s, d)
        # predictor
        dX, dy, dS, dx_lp, ds_lp = pd.direction(X, S, Sinv, x_lp, s_lp, Rd, rd_lp, rp, fac, 0.0)
        ap = min(1.0, min(_max_step(Xk, D) for Xk, D in zip(X, dX)), _lp_step(x_lp, dx_lp))
        ad = min(1.0, min(_max_step(Sk, D) for Sk, D in zip(S, dS)), _lp_step(s_lp, ds_lp))
        gap_aff = sum(float(np.sum((Xk + ap * a) * (Sk + ad * b))) for Xk, a, Sk, b in zip(X, dX, S, dS))
        gap_aff += float((x_lp + ap * dx_lp) @ (s_lp + ad * ds_lp))
        sigma = min(1.0, max(0.0, gap_aff / gap)) ** 3
        corr = [a @ b for a, b in zip(dX, dS)]
        dX, dy, dS, dx_lp, ds_lp = pd.direction(X, S, Sinv, x_lp, s_lp, Rd, rd_lp, rp, fac, sigma * mu,
                                                corr, dx_lp * ds_lp)
        ap = min(1.0, 0.95 * min(min(_max_step(Xk, D) for Xk, D in zip(X, dX)), _lp_step(x_lp, dx_lp)))
        ad = min(1.0, 0.95 * min(min(_max_step(Sk, D) for Sk, D in zip(S, dS)), _lp_step(s_lp, ds_lp)))
        X = [Xk + ap * D for Xk, D in zip(X, dX)]
        x_lp = x_lp + ap * dx_lp
        y = y + ad * dy
        S = [Sk + ad * D for Sk, D in zip(S, dS)]
        s_lp = s_lp + ad * ds_lp
        if max(ap, ad) < 1e-10:
            logger.debug("sdpfeas: stalled at it=%d", it)
            break
    v_try = np.clip(y[:K], lo, hi)
    t_try = float(stack.min_eigs(v_try).min())
    if t_try > best_t:
        best_t, best_v = t_try, v_try
    lam = stack.min_eigs(best_v)
    worst = int(np.argmin(lam))
    achieved = float(lam[worst])
    if achieved >= prob.target_margin:
        status = FEASIBLE
    elif converged:
        status = INFEASIBLE_EVIDENCE
    else:
        status = MAX_ITERS
    logger.debug("sdpfeas: status=%s margin=%.3e iters=%d", status, achieved, it)
    return FeasResult(status, best_v if status == FEASIBLE else None, achieved, it, best_v, worst)


class _Equilibrated:
    """Cholesky factor of D M D, solving M x = r as D (DMD)^-1 D r."""

    def __init__(self, fac, d):
        self.fac, self.d = fac, d


def check_assignment(prob: FeasibilityProblem, v) -> list[float]:
    """Minimum eigenvalue of every LMI at v, computed one LMI at a time."""
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != prob.nvars:
        raise ValueError(f"assignment has length {v.shape[0]}, problem has {prob.nvars} variables")
    return [float(scipy.linalg.eigh(lmi.evaluate(v), eigvals_only=True)[0]) for lmi in prob.lmis]


# -- plain-text dump -------------------------------------------------------
#
#   feasprob <nvars> <n_lmis> <target_margin>
#   box <lo_1> <hi_1> ... <lo_n> <hi_n>
#   lmi <dim> <n_coeffs>
#   const <row-major entries>
#   coef <index> <row-major entries>      (n_coeffs lines)


def dump_problem(prob: FeasibilityProblem) -> str:
    lo, hi = prob.box
    lines = [f"feasprob {prob.nvars} {prob.n_lmis} {prob.target_margin!r}",
             "box " + " ".join(f"{float(a)!r} {float(b)!r}" for a, b in zip(lo, hi))]
    for lmi in prob.lmis:
        lines.append(f"lmi {lmi.dim} {len(lmi.coeffs)}")
        lines.append("const " + " ".join(repr(float(x)) for x in lmi.constant.ravel()))
        for idx, F in lmi.coeffs:
            lines.append(f"coef {idx} " + " ".join(repr(float(x)) for x in F.ravel()))
    return "\n".join(lines) + "\n"


def load_problem(text: str) -> FeasibilityProblem:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    head = rows[0]
    if head[0] != "feasprob":
        raise ValueError("not a feasibility problem dump")
    nvars, nl, target = int(head[1]), int(head[2]), float(head[3])
    vals = [float(x) for x in rows[1][1:]]
    lo, hi = np.array(vals[0::2]), np.array(vals[1::2])
    pos = 2
    lmis = []
    for _ in range(nl):
        d, nc = int(rows[pos][1]), int(rows[pos][2])
        F0 = np.array([float(x) for x in rows[pos + 1][1:]]).reshape(d, d)
        coeffs = []
        for k in range(nc):
            r = rows[pos + 2 + k]
            coeffs.append((int(r[1]), np.array([float(x) for x in r[2:]]).reshape(d, d)))
        lmis.append(AffineLMI(F0, coeffs))
        pos += 2 + nc
    return FeasibilityProblem(nvars, lmis, (lo, hi), target)


def lmi_from_terms(constant, terms: Sequence[tuple[int, np.ndarray]], label: str = "") -> AffineLMI:
    """Build an AffineLMI, dropping coefficient matrices that are exactly zero."""
    return AffineLMI(constant, [(i, F) for i, F in terms if np.any(F)], label)
