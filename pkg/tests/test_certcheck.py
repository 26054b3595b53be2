import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import angular_grid_max, multiplier_feasible, projected_lmax, random_instance, schur_lower_bound_2x2
from tcontract.certcheck import (
    CertificateError,
    HypothesisError,
    MetricCertificate,
    Q_of,
    assemble_H,
    certificate_to_text,
    complement_basis,
    grid_verify,
    metric_distance_segment,
    multiplier_margin,
    parse_certificate,
    projected_margin,
    strong_check,
    transverse_check_multiplier,
    transverse_check_projected,
)
from tcontract.polycore import PolyMatrix, Polynomial, parse_polynomial
from tcontract.simlab import integrate_fn
from tcontract.sysmodel import builtin, jacobian, parse_system
from tcontract.synth import ball_region


def const_cert(W, lam, mode="strong", rho=None, nvars=2, eps_pd=1e-3):
    Wp = PolyMatrix.constant(np.asarray(W, dtype=float), nvars)
    rp = None if rho is None else Polynomial.constant(nvars, rho)
    return MetricCertificate(Wp, rp, lam, eps_pd, mode)


LIN = builtin("linear_stable_2d")


# -- assemble_H and Q ------------------------------------------------------------

def test_H_moore_greitzer_identity_metric(mg12):
    # lambda = 0 is not a valid certificate rate, so subtract the lambda*W term instead
    lam = 1e-3
    H = assemble_H(mg12, const_cert(np.eye(2), lam))
    np.testing.assert_allclose(H([0, 0]) - lam * np.eye(2), [[0, 2], [2, -2]], atol=1e-15)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 3.5])
def test_H_linear_constant(lam):
    H = assemble_H(LIN, const_cert(np.eye(2), lam))
    for x in ([0, 0], [0.3, -0.2]):
        np.testing.assert_allclose(H(x), (lam - 2) * np.eye(2), atol=1e-15)


def test_H_constant_metric_has_no_lie_term(mg12):
    W = np.array([[2.0, 0.3], [0.3, 1.0]])
    H = assemble_H(mg12, const_cert(W, 0.1))
    x = np.array([0.7, -1.1])
    A = jacobian(mg12)(x)
    np.testing.assert_allclose(H(x), W @ A.T + A @ W + 0.1 * W, atol=1e-12)


def test_Q_examples(mg12):
    const = parse_system("system c\nstate a b\ndyn a' = 1\ndyn b' = 0\nbox -1 1 -1 1\n")
    np.testing.assert_array_equal(Q_of(const)([0.4, 0.2]), [[1, 0], [0, 0]])
    np.testing.assert_allclose(Q_of(mg12)([0, 0]), [[1.44, 0], [0, 0]], atol=1e-14)
    phi = np.real(np.roots([0.5, 1.5, 3, 1.2])[-1])
    np.testing.assert_allclose(Q_of(mg12)([phi, 3 * phi]), np.zeros((2, 2)), atol=1e-14)


def random_W(rng, nvars=2, deg=2):
    upper = {}
    for i in range(2):
        for j in range(i, 2):
            upper[(i, j)] = Polynomial(nvars, {tuple(rng.integers(0, deg + 1, nvars)): c
                                               for c in rng.normal(size=3)})
    return PolyMatrix.from_upper(2, upper, nvars)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 10))
def test_H_linear_in_W(seed, c):
    """H is affine in W; with the same lambda the map W -> H is linear."""
    rng = np.random.default_rng(seed)
    mg = builtin("van_der_pol")
    from tcontract.sysmodel import bind_parameters
    vdp = bind_parameters(mg, {"mu": 1.0})
    W1, W2 = random_W(rng), random_W(rng)
    mk = lambda W: MetricCertificate(W, None, 0.3, 1e-3, "strong")
    H1, H2 = assemble_H(vdp, mk(W1)), assemble_H(vdp, mk(W2))
    H12 = assemble_H(vdp, mk(W1 + W2))
    Hc = assemble_H(vdp, mk(W1.scale(c)))
    for i in range(2):
        for j in range(2):
            assert H12[i, j].allclose(H1[i, j] + H2[i, j], atol=1e-9)
            assert Hc[i, j].allclose(H1[i, j] * c, atol=1e-9 * c)


# -- projected check -----------------------------------------------------------------

def test_projected_examples():
    assert projected_margin([[0, 2], [2, -2]], [1, 0]) == pytest.approx(-2)
    assert projected_margin([[-5, 0], [0, 3]], [1, 0]) == pytest.approx(3)
    P = complement_basis([1.0, 0.0])
    np.testing.assert_allclose(np.abs(P[:, 0]), [0, 1])


def test_projected_matches_angular_grid():
    rng = np.random.default_rng(7)
    for _ in range(50):
        H, f = random_instance(rng, 3)
        assert projected_margin(H, f) == pytest.approx(angular_grid_max(H, f), abs=1e-3)
        assert projected_margin(H, f) >= angular_grid_max(H, f) - 1e-12


def test_projected_equilibrium_error():
    with pytest.raises(HypothesisError, match="equilibrium"):
        projected_margin(np.eye(2), [0.0, 0.0])


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 5))
def test_complement_basis_orthonormal(seed, n):
    f = np.random.default_rng(seed).normal(size=n)
    P = complement_basis(f)
    np.testing.assert_allclose(P.T @ P, np.eye(n - 1), atol=1e-12)
    np.testing.assert_allclose(f @ P, 0, atol=1e-12 * np.linalg.norm(f))


def test_complement_basis_deterministic_tie_break():
    P1 = complement_basis([1.0, 1.0, 0.0])
    P2 = complement_basis([1.0, 1.0, 0.0])
    np.testing.assert_array_equal(P1, P2)
    # k = 0 on a tie, so the reflected first axis is the one dropped
    np.testing.assert_allclose(np.abs(P1[:, -1]), [0, 0, 1])


# -- multiplier check -----------------------------------------------------------------

def test_multiplier_examples():
    H = np.array([[0.0, 2.0], [2.0, -2.0]])
    f = np.array([1.0, 0.0])
    assert multiplier_margin(H, f, 2.0) == pytest.approx(schur_lower_bound_2x2(-2, 2, -2), abs=1e-12)
    assert multiplier_margin(H, f, 2.0) == pytest.approx(0.0, abs=1e-12)
    m4 = multiplier_margin(H, f, 4.0)
    assert m4 < 0 and m4 == pytest.approx(schur_lower_bound_2x2(-4, 2, -2))


def test_multiplier_negative_rho_fails():
    sys = parse_system("system c\nstate a b\ndyn a' = 1 - a\ndyn b' = -b\nbox -1 1 -1 1\n")
    cert = const_cert(np.eye(2), 0.5, "transverse", rho=-1.0)
    v = transverse_check_multiplier(sys, cert, [0.0, 0.0])
    assert v.margin < 0 and not v.passed and v.rho == -1.0


def test_multiplier_needs_transverse_certificate():
    with pytest.raises(HypothesisError):
        transverse_check_multiplier(LIN, const_cert(np.eye(2), 1.0), [0.5, 0.5])


def test_sprocedure_losslessness_small():
    """S-lemma: multiplier feasibility (bisection oracle) agrees with the projected verdict."""
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(300):
        n = int(rng.integers(2, 5))
        H, f = random_instance(rng, n)
        proj = projected_margin(H, f)
        assert proj == pytest.approx(projected_lmax(H, f), abs=1e-9)
        if abs(proj + 1e-9) <= 1e-7:
            continue
        feasible, rho = multiplier_feasible(H, f)
        assert feasible == (proj < -1e-9)
        if feasible:
            assert multiplier_margin(H, f, rho) <= -1e-9
        checked += 1
    assert checked > 250


# -- strong check ---------------------------------------------------------------------

def test_strong_examples():
    v = strong_check(LIN, const_cert(np.eye(2), 1.0), [0.2, 0.1])
    assert v.margin == pytest.approx(-1.0) and v.passed
    v = strong_check(LIN, const_cert(np.eye(2), 3.0), [0.2, 0.1])
    assert v.margin == pytest.approx(1.0) and not v.passed


def test_strong_check_requires_pd():
    v = strong_check(LIN, const_cert(0.5 * np.eye(2), 1.0, eps_pd=0.75), [0.0, 0.0])
    assert v.margin < 0 and not v.passed


def test_strong_certificate_moore_greitzer_08(mg08, strong08):
    cert, region = strong08
    rep = grid_verify(mg08, cert, 100, region=region)
    assert rep.passed and rep.n_points > 7000


# -- grid_verify -------------------------------------------------------------------------

def test_grid_verify_linear():
    rep = grid_verify(LIN, const_cert(np.eye(2), 1.0), 100)
    assert rep.passed and rep.n_fail == 0
    assert rep.worst_margin == pytest.approx(-1.0)
    assert rep.n_points == int(np.sum(np.sum(LIN.region.grid(100) ** 2, axis=1) <= 1.0))


def test_grid_verify_reference_certificate(mg12, reference_cert):
    rep = grid_verify(mg12, reference_cert, 200)
    assert rep.passed, rep.as_dict()
    assert rep.min_rho >= -1e-9 and rep.worst_pd_margin <= 0


def test_transverse_without_equilibrium_exclusion_fails(mg12, reference_cert):
    """On the full disc the equilibrium is back in K; there Q = 0 and H must be
    negative on its own, which an unstable focus rules out."""
    region = ball_region(mg12, 10.0)
    rep = grid_verify(mg12, reference_cert, 200, region=region)
    assert not rep.passed
    phi = np.real(np.roots([0.5, 1.5, 3, 1.2])[-1])
    eq = np.array([phi, 3 * phi])
    bad = rep.failing_points
    assert np.min(np.linalg.norm(bad - eq, axis=1)) < 0.2
    # every failure is within the excised neighborhood |f|^2 < 0.1
    assert np.all(np.sum(mg12.rhs_many(bad) ** 2, axis=1) < 0.1)


def test_grid_verify_schedule_independent(mg12, reference_cert):
    a = grid_verify(mg12, reference_cert, 120, jobs=1, chunk=997)
    b = grid_verify(mg12, reference_cert, 120, jobs=3, chunk=1500)
    assert a.as_dict() == b.as_dict()


def test_grid_verify_empty_grid():
    sys = parse_system("system s\nstate x y\ndyn x' = -x\ndyn y' = -y\nregion poly -1 - x^2\nbox -1 1 -1 1\n")
    with pytest.raises(CertificateError, match="empty"):
        grid_verify(sys, const_cert(np.eye(2), 1.0), 20)


def test_perturbed_certificate_fails_locally(mg12, reference_cert, reference_text):
    """+10 on one coefficient of W: verification fails and names an in-region worst point."""
    cert, names = parse_certificate(reference_text)
    W = cert.W
    entry = W[0, 0]
    exp = next(iter(entry.terms))
    bumped = entry + Polynomial(W.nvars, {exp: 10.0})
    W2 = PolyMatrix.from_upper(2, {(0, 0): bumped, (0, 1): W[0, 1], (1, 1): W[1, 1]}, W.nvars)
    bad = MetricCertificate(W2, cert.rho, cert.lam, cert.eps_pd, cert.mode)
    rep = grid_verify(mg12, bad, 100)
    assert not rep.passed
    assert mg12.region.contains(rep.worst_point)
    v = transverse_check_multiplier(mg12, bad, rep.worst_point)
    assert v.margin == pytest.approx(rep.worst_margin, rel=1e-9)


# -- distance ---------------------------------------------------------------------------

def test_metric_distance_examples():
    x1, x2 = np.array([0.1, -0.4]), np.array([1.3, 0.5])
    d = np.linalg.norm(x1 - x2)
    for steps in (1, 7, 32):
        assert metric_distance_segment(const_cert(np.eye(2), 1.0), x1, x2, steps) == pytest.approx(d)
        # M = 4I  <=>  W = I / 4
        assert metric_distance_segment(const_cert(0.25 * np.eye(2), 1.0, eps_pd=0.1), x1, x2, steps) \
            == pytest.approx(2 * d)


def test_metric_distance_refinement(reference_cert):
    x1, x2 = np.array([2.0, -1.0]), np.array([-1.5, 2.5])
    d16 = metric_distance_segment(reference_cert, x1, x2, 16)
    d32 = metric_distance_segment(reference_cert, x1, x2, 32)
    assert abs(d32 - d16) < 0.01 * d16


def test_metric_distance_errors():
    with pytest.raises(ValueError):
        metric_distance_segment(const_cert(np.eye(2), 1.0), [0, 0], [1, 1], 0)
    z = Polynomial.zero(2)
    W = PolyMatrix([[parse_polynomial("x1", ("x1", "x2")), z], [z, Polynomial.constant(2, 1.0)]], symmetric=True)
    cert = MetricCertificate(W, None, 1.0, 1e-3, "strong")
    with pytest.raises(CertificateError):
        metric_distance_segment(cert, [-1.0, 0.0], [1.0, 0.0], 4)


# -- certificate files --------------------------------------------------------------------

def test_certificate_roundtrip(reference_cert, reference_text):
    cert, names = parse_certificate(reference_text)
    again, names2 = parse_certificate(certificate_to_text(cert, names))
    assert names2 == names == ("phi", "psi")
    assert again.W == cert.W and again.rho == cert.rho
    assert (again.lam, again.eps_pd, again.mode, again.degrees) == (cert.lam, cert.eps_pd, cert.mode, cert.degrees)


def test_certificate_invariants():
    W = PolyMatrix.identity(2, 2)
    with pytest.raises(CertificateError):
        MetricCertificate(W, None, 1.0, 1e-3, "transverse")
    with pytest.raises(CertificateError):
        MetricCertificate(W, Polynomial.constant(2, 1.0), 1.0, 1e-3, "strong")
    with pytest.raises(CertificateError):
        MetricCertificate(W, None, 0.0, 1e-3, "strong")
    with pytest.raises(CertificateError):
        MetricCertificate(W, None, 1.0, 0.0, "strong")


def test_transverse_checks_agree_on_reference(mg12, reference_cert):
    """Where the multiplier check passes, the projected check passes too (S-lemma direction)."""
    X = mg12.region.grid(60)
    for x in X[::7]:
        m = transverse_check_multiplier(mg12, reference_cert, x)
        p = transverse_check_projected(mg12, reference_cert, x)
        if m.passed:
            assert p.margin <= m.margin + 1e-9


# -- variational flow ---------------------------------------------------------------------

def test_variational_decay_rate(mg08, strong08):
    """delta' M delta decays at rate >= lambda (1 - 5%) along co-integrated trajectories."""
    cert, region = strong08
    A = jacobian(mg08)
    rng = np.random.default_rng(5)

    def field(z):
        x, d = z[:2], z[2:]
        return np.concatenate([mg08.rhs(x), A(x) @ d])

    long_runs = 0
    for _ in range(8):
        x0 = rng.uniform(-1.4, 1.4, 2)
        d0 = rng.normal(size=2)
        traj = integrate_fn(field, np.concatenate([x0, d0]), 10.0, tol=1e-10)
        # the bound only holds while the trajectory stays in the certified region
        inside = region.contains_many(traj.states[:, :2])
        stop = len(inside) if inside.all() else int(np.argmin(inside))
        X, D, t = traj.states[:stop, :2], traj.states[:stop, 2:], traj.times[:stop]
        V = np.array([d @ np.linalg.solve(cert.W(x), d) for x, d in zip(X, D)])
        rate = -(np.log(V[1:]) - np.log(V[0])) / t[1:]
        assert np.all(rate >= cert.lam * 0.95)
        long_runs += t[-1] > 5.0
    assert long_runs >= 3
