"""Pointwise verification of (transverse) contraction certificates.

A certificate is a dual metric W(x) = M(x)^{-1}, a rate lambda and, in
transverse mode, a multiplier rho(x). All checks work with

    H(x) = W A' + A W - dW/dt + lambda W

which is linear in (W, rho). Strong contraction needs H < 0 everywhere;
transverse contraction needs H - rho f f' < 0 with rho >= 0, equivalently
H < 0 on the hyperplane orthogonal to f(x).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .polycore import PolyMatrix, Polynomial, lie_derivative, parse_polynomial
from .sysmodel import DynSystem, Region, jacobian

STRONG = "strong"
TRANSVERSE = "transverse"

DEFAULT_MARGIN = 1e-6
RHO_TOL = 1e-9


class CertificateError(ValueError):
    pass


class HypothesisError(CertificateError):
    """The certificate or system does not satisfy a check's preconditions."""


@dataclass(frozen=True)
class MetricCertificate:
    W: PolyMatrix
    rho: Polynomial | None
    lam: float
    eps_pd: float
    mode: str = TRANSVERSE
    system: str = ""
    degrees: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not self.W.symmetric:
            raise CertificateError("W must be symmetric")
        if not (self.lam > 0 and self.eps_pd > 0):
            raise CertificateError("lambda and eps_pd must be positive")
        if self.mode not in (STRONG, TRANSVERSE):
            raise CertificateError(f"unknown mode {self.mode!r}")
        if self.mode == TRANSVERSE and self.rho is None:
            raise CertificateError("transverse certificate needs a multiplier rho")
        if self.mode == STRONG and self.rho is not None:
            raise CertificateError("strong certificate must not carry rho")
        if self.rho is not None and self.rho.nvars != self.W.nvars:
            raise CertificateError("rho and W use different variable spaces")

    @property
    def n(self) -> int:
        return self.W.rows


@dataclass
class PointVerdict:
    x: np.ndarray
    margin: float
    kind: str
    passed: bool
    rho: float | None = None


@dataclass
class GridReport:
    """Outcome of grid verification. ``worst_margin`` refers to the contraction LMI."""

    mode: str
    n_points: int
    worst_margin: float
    worst_point: np.ndarray
    worst_index: int
    n_pass: int
    n_fail: int
    margin_req: float
    worst_pd_margin: float
    min_rho: float | None
    worst_projected: float | None
    passed: bool
    failing_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_points": self.n_points,
            "worst_margin": self.worst_margin,
            "worst_point": [float(v) for v in self.worst_point],
            "n_pass": self.n_pass,
            "n_fail": self.n_fail,
            "margin_req": self.margin_req,
            "worst_pd_margin": self.worst_pd_margin,
            "min_rho": self.min_rho,
            "worst_projected": self.worst_projected,
            "passed": self.passed,
        }


def _require_bound(sys: DynSystem) -> None:
    if not sys.is_bound:
        raise HypothesisError(f"system {sys.name} has unbound parameters: "
                              + ", ".join(p.name for p in sys.params))


def _check_dims(sys: DynSystem, cert: MetricCertificate) -> None:
    if cert.W.rows != sys.n or cert.W.nvars != sys.nvars:
        raise CertificateError(f"certificate is {cert.W.rows}x{cert.W.rows} over {cert.W.nvars} variables; "
                               f"system {sys.name} has {sys.n} states and {sys.nvars} variables")


def assemble_H(sys: DynSystem, cert: MetricCertificate) -> PolyMatrix:
    """Symbolic H over all system variables; unbound parameters stay symbolic."""
    _check_dims(sys, cert)
    A = jacobian(sys)
    AW = A @ cert.W
    Wdot = lie_derivative(cert.W, sys.f)
    n = sys.n
    upper = {}
    for i in range(n):
        for j in range(i, n):
            upper[(i, j)] = AW[i, j] + AW[j, i] - Wdot[i, j] + cert.W[i, j] * cert.lam
    return PolyMatrix.from_upper(n, upper, sys.nvars)


def Q_of(sys: DynSystem) -> PolyMatrix:
    n = sys.n
    return PolyMatrix.from_upper(n, {(i, j): sys.f[i] * sys.f[j] for i in range(n) for j in range(i, n)},
                                 sys.nvars)


def complement_basis(fx) -> np.ndarray:
    """Orthonormal basis (n x n-1) of the complement of fx via a Householder reflector.

    The reflector is built from e_k with k = argmax |fx_i| (lowest index on ties).
    """
    fx = np.asarray(fx, dtype=float)
    nrm = np.linalg.norm(fx)
    if nrm == 0.0:
        raise HypothesisError("equilibrium point: transversality undefined")
    u = fx / nrm
    k = int(np.argmax(np.abs(u)))
    w = u.copy()
    w[k] += 1.0 if u[k] >= 0 else -1.0
    R = np.eye(len(u)) - 2.0 * np.outer(w, w) / (w @ w)
    return np.delete(R, k, axis=1)


def _complement_bases(F: np.ndarray) -> np.ndarray:
    """Batched version of complement_basis for rows of F (N, n)."""
    N, n = F.shape
    nrm = np.linalg.norm(F, axis=1)
    if np.any(nrm == 0.0):
        raise HypothesisError("equilibrium point: transversality undefined")
    U = F / nrm[:, None]
    k = np.argmax(np.abs(U), axis=1)
    Wv = U.copy()
    rows = np.arange(N)
    Wv[rows, k] += np.where(U[rows, k] >= 0, 1.0, -1.0)
    R = np.eye(n)[None] - 2.0 * np.einsum("ni,nj->nij", Wv, Wv) / np.einsum("ni,ni->n", Wv, Wv)[:, None, None]
    keep = np.ones((N, n), dtype=bool)
    keep[rows, k] = False
    return R.transpose(0, 2, 1)[keep].reshape(N, n - 1, n).transpose(0, 2, 1)


def _lmax(S: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(S)[..., -1]


def projected_margin(Hx, fx) -> float:
    """lambda_max of H restricted to the orthogonal complement of f."""
    P = complement_basis(fx)
    return float(_lmax(P.T @ np.asarray(Hx, dtype=float) @ P))


def multiplier_margin(Hx, fx, rho: float) -> float:
    """lambda_max(H - rho f f')."""
    fx = np.asarray(fx, dtype=float)
    return float(_lmax(np.asarray(Hx, dtype=float) - rho * np.outer(fx, fx)))


def transverse_check_projected(sys: DynSystem, cert: MetricCertificate, x,
                               margin_req: float = 0.0, H: PolyMatrix | None = None) -> PointVerdict:
    x = np.asarray(x, dtype=float)
    Hx = (H if H is not None else assemble_H(sys, cert))(x)
    margin = projected_margin(Hx, sys.rhs(x))
    return PointVerdict(x, margin, "transverse_projected", margin < -margin_req)


def transverse_check_multiplier(sys: DynSystem, cert: MetricCertificate, x,
                                margin_req: float = 0.0, H: PolyMatrix | None = None) -> PointVerdict:
    if cert.mode != TRANSVERSE:
        raise HypothesisError("multiplier check needs a transverse certificate (missing rho)")
    x = np.asarray(x, dtype=float)
    Hx = (H if H is not None else assemble_H(sys, cert))(x)
    r = float(cert.rho(x))
    margin = multiplier_margin(Hx, sys.rhs(x), r)
    return PointVerdict(x, margin, "transverse_multiplier", margin < -margin_req and r >= 0.0, r)


def strong_check(sys: DynSystem, cert: MetricCertificate, x,
                 margin_req: float = 0.0, H: PolyMatrix | None = None) -> PointVerdict:
    if cert.mode != STRONG:
        raise HypothesisError("strong check needs a strong certificate")
    x = np.asarray(x, dtype=float)
    Hx = (H if H is not None else assemble_H(sys, cert))(x)
    margin = float(_lmax(Hx))
    pd = float(np.linalg.eigvalsh(cert.W(x))[0])
    return PointVerdict(x, margin, "strong_lmi", margin < -margin_req and pd >= cert.eps_pd)


def w_pd_check(cert: MetricCertificate, x) -> PointVerdict:
    lam_min = float(np.linalg.eigvalsh(cert.W(np.asarray(x, dtype=float)))[0])
    margin = cert.eps_pd - lam_min
    return PointVerdict(np.asarray(x, dtype=float), margin, "W_pd", margin <= 0.0)


def grid_points(region: Region, per_axis: int | None = None, points=None) -> np.ndarray:
    if points is not None:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        return X[region.contains_many(X)]
    if per_axis is None:
        raise ValueError("give per_axis or explicit points")
    return region.grid(per_axis)


def evaluate_margins(sys: DynSystem, cert: MetricCertificate, X: np.ndarray, H: PolyMatrix | None = None,
                     projected: bool = True) -> dict[str, np.ndarray]:
    """Per-point margins on an (N, n) array of states (vectorized)."""
    H = assemble_H(sys, cert) if H is None else H
    Hx = H.eval_many(X)
    Wx = cert.W.eval_many(X)
    out = {"pd": cert.eps_pd - np.linalg.eigvalsh(Wx)[:, 0]}
    if cert.mode == STRONG:
        out["lmi"] = _lmax(Hx)
        return out
    F = sys.rhs_many(X)
    r = cert.rho.eval_many(X)
    out["rho"] = r
    out["lmi"] = _lmax(Hx - r[:, None, None] * np.einsum("ni,nj->nij", F, F))
    if projected:
        nz = np.linalg.norm(F, axis=1) > 0
        proj = np.full(len(X), np.inf)
        if nz.any():
            P = _complement_bases(F[nz])
            proj[nz] = _lmax(np.einsum("nia,nij,njb->nab", P, Hx[nz], P))
        out["projected"] = proj
    return out


def grid_verify(sys: DynSystem, cert: MetricCertificate, per_axis: int | None = None, points=None,
                margin_req: float = DEFAULT_MARGIN, region: Region | None = None, jobs: int = 1,
                chunk: int = 20000) -> GridReport:
    """Check the certificate on every grid point inside the region.

    Passes iff the contraction margin is <= -margin_req everywhere, W >= eps_pd I
    everywhere and (transverse mode) rho >= -1e-9 everywhere. Worst point ties
    are broken by lowest point index, so the result does not depend on ``jobs``.
    """
    region = region or sys.region
    if region is None:
        raise HypothesisError(f"system {sys.name} has no region of interest")
    if not sys.is_bound and len(region.box) != sys.nvars:
        # a parameter-dependent certificate is checked over states x parameters
        _require_bound(sys)
    X = grid_points(region, per_axis, points)
    if len(X) == 0:
        raise CertificateError("empty verification grid (region and box do not overlap)")
    H = assemble_H(sys, cert)
    chunks = [X[i:i + chunk] for i in range(0, len(X), chunk)]
    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(lambda c: evaluate_margins(sys, cert, c, H), chunks))
    else:
        parts = [evaluate_margins(sys, cert, c, H) for c in chunks]
    res = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    lmi = res["lmi"]
    worst = int(np.argmax(lmi))  # argmax returns the first maximal index
    fail_mask = (lmi > -margin_req) | (res["pd"] > 0)
    min_rho = None
    if "rho" in res:
        fail_mask |= res["rho"] < -RHO_TOL
        min_rho = float(res["rho"].min())
    n_fail = int(fail_mask.sum())
    return GridReport(
        mode=cert.mode,
        n_points=len(X),
        worst_margin=float(lmi[worst]),
        worst_point=X[worst],
        worst_index=worst,
        n_pass=len(X) - n_fail,
        n_fail=n_fail,
        margin_req=margin_req,
        worst_pd_margin=float(res["pd"].max()),
        min_rho=min_rho,
        worst_projected=float(res["projected"].max()) if "projected" in res else None,
        passed=n_fail == 0,
        failing_points=X[fail_mask],
    )


def metric_distance_segment(cert: MetricCertificate, x1, x2, steps: int = 16) -> float:
    """Length of the straight segment x1 -> x2 in the metric M = W^{-1} (midpoint rule).

    This upper-bounds the geodesic distance.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    dx = (x2 - x1) / steps
    mids = x1[None, :] + (np.arange(steps) + 0.5)[:, None] * dx[None, :]
    Ws = cert.W.eval_many(_pad(mids, cert.W.nvars))
    total = 0.0
    for Wk in Ws:
        try:
            c = np.linalg.cholesky(Wk)
        except np.linalg.LinAlgError as exc:
            raise CertificateError("W is singular or indefinite on the segment") from exc
        y = np.linalg.solve(c, dx)
        total += math.sqrt(float(y @ y))
    return total


def _pad(X: np.ndarray, nvars: int) -> np.ndarray:
    if X.shape[1] != nvars:
        raise CertificateError(f"points have {X.shape[1]} coordinates, metric uses {nvars} variables")
    return X


# -- certificate file ------------------------------------------------------
#
#   certificate <system name>
#   mode <strong|transverse>
#   lambda <float>
#   eps_pd <float>
#   degrees <degree_W> <degree_rho>
#   vars <name> ...
#   W <i> <j> = <polynomial>      (1-based, upper triangle)
#   rho = <polynomial>            (transverse only)


def certificate_to_text(cert: MetricCertificate, var_names) -> str:
    lines = [f"certificate {cert.system or 'unnamed'}", f"mode {cert.mode}", f"lambda {float(cert.lam)!r}",
             f"eps_pd {float(cert.eps_pd)!r}", f"degrees {cert.degrees[0]} {cert.degrees[1]}",
             "vars " + " ".join(var_names)]
    for i in range(cert.n):
        for j in range(i, cert.n):
            lines.append(f"W {i + 1} {j + 1} = {cert.W[i, j].to_string(var_names)}")
    if cert.rho is not None:
        lines.append(f"rho = {cert.rho.to_string(var_names)}")
    return "\n".join(lines) + "\n"


def parse_certificate(text: str) -> tuple[MetricCertificate, tuple[str, ...]]:
    header: dict[str, list[str]] = {}
    entries: dict[tuple[int, int], str] = {}
    rho_text = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("W "):
            lhs, rhs = line.split("=", 1)
            parts = lhs.split()
            if len(parts) != 3:
                raise CertificateError(f"line {lineno}: expected 'W i j = <expr>'")
            entries[(int(parts[1]) - 1, int(parts[2]) - 1)] = rhs.strip()
        elif line.startswith("rho"):
            rho_text = line.split("=", 1)[1].strip()
        else:
            parts = line.split()
            header[parts[0]] = parts[1:]
    for key in ("certificate", "mode", "lambda", "eps_pd", "vars"):
        if key not in header:
            raise CertificateError(f"certificate file missing '{key}' line")
    names = tuple(header["vars"])
    n = max((max(i, j) for i, j in entries), default=-1) + 1
    if n == 0:
        raise CertificateError("certificate has no W entries")
    W = PolyMatrix.from_upper(n, {ij: parse_polynomial(t, names) for ij, t in entries.items()}, len(names))
    rho = parse_polynomial(rho_text, names) if rho_text is not None else None
    mode = header["mode"][0]
    degrees = tuple(int(d) for d in header.get("degrees", ["0", "0"]))
    if mode == TRANSVERSE and rho is None:
        raise HypothesisError("transverse certificate without rho")
    cert = MetricCertificate(W, rho if mode == TRANSVERSE else None, float(header["lambda"][0]),
                             float(header["eps_pd"][0]), mode, header["certificate"][0], degrees)
    return cert, names
