import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tcontract.sdpfeas import (
    FEASIBLE,
    AffineLMI,
    FeasibilityProblem,
    check_assignment,
    dump_problem,
    load_problem,
    lmi_from_terms,
    solve_feasibility,
)

I2 = np.eye(2)


def interval_problem(target=0.0):
    return FeasibilityProblem(1, [AffineLMI(-I2, [(0, I2)]), AffineLMI(5 * I2, [(0, -I2)])], target_margin=target)


def planted(rng, n_lmis, dim, nvars, slack):
    """LMIs that all equal slack*I at a random planted point."""
    v_star = rng.normal(size=nvars)
    lmis = []
    for _ in range(n_lmis):
        Fs = []
        for k in range(nvars):
            B = rng.normal(size=(dim, dim))
            Fs.append((k, 0.5 * (B + B.T)))
        F0 = slack * np.eye(dim) - sum(v_star[k] * F for k, F in Fs)
        lmis.append(AffineLMI(0.5 * (F0 + F0.T), Fs))
    return FeasibilityProblem(nvars, lmis), v_star


# -- examples ----------------------------------------------------------------------

def test_interval_feasible():
    m = 0.25
    res = solve_feasibility(interval_problem(target=m), seed=0)
    assert res.status == FEASIBLE
    assert 1 + m - 1e-9 <= res.v[0] <= 5 - m + 1e-9
    assert min(check_assignment(interval_problem(), res.v)) >= m - 1e-9


def test_interval_max_margin_is_midpoint():
    res = solve_feasibility(interval_problem())
    assert res.v[0] == pytest.approx(3.0, abs=1e-6)
    assert res.achieved_margin == pytest.approx(2.0, abs=1e-6)


def test_contradictory():
    prob = FeasibilityProblem(1, [AffineLMI(-I2, [(0, I2)]), AffineLMI(np.zeros((2, 2)), [(0, -I2)])])
    res = solve_feasibility(prob, seed=0)
    assert res.status != FEASIBLE and res.v is None
    assert res.achieved_margin <= -0.5 + 1e-9


def test_rho_recovery():
    """-H + rho Q >= t I for the 2x2 example needs 2 rho - 4 > 0."""
    H = np.array([[0.0, 2.0], [2.0, -2.0]])
    Q = np.array([[1.0, 0.0], [0.0, 0.0]])
    prob = FeasibilityProblem(1, [AffineLMI(-H, [(0, Q)]), AffineLMI(np.zeros((1, 1)), [(0, np.eye(1))])],
                              box=([0.0], [100.0]), target_margin=1e-3)
    res = solve_feasibility(prob)
    assert res.feasible
    rho = res.v[0]
    assert rho > 2
    # independent determinant/trace test for positive definiteness of -H + rho Q
    M = -H + rho * Q
    assert np.trace(M) > 0 and np.linalg.det(M) > 0


def test_check_assignment_examples():
    prob = FeasibilityProblem(1, [AffineLMI(I2, [(0, np.zeros((2, 2)))])])
    assert check_assignment(prob, [0.0]) == [pytest.approx(1.0)]
    margins = check_assignment(interval_problem(), [6.0])
    assert margins[0] > 0 and margins[1] == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        check_assignment(prob, [0.0, 1.0])


def test_nan_input_rejected():
    bad = np.array([[np.nan, 0], [0, 1.0]])
    prob = FeasibilityProblem(1, [AffineLMI(I2, [(0, I2)])])
    prob._lmis[0].constant = bad
    prob._blocks = None
    with pytest.raises(ValueError):
        solve_feasibility(prob)


def test_malformed_problems():
    with pytest.raises(ValueError):
        AffineLMI(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        AffineLMI(I2, [(0, np.eye(3))])
    with pytest.raises(ValueError):
        FeasibilityProblem(1, [AffineLMI(I2, [(3, I2)])])
    with pytest.raises(ValueError):
        FeasibilityProblem(1, [AffineLMI(I2)], box=([1.0], [0.0]))
    with pytest.raises(ValueError):
        FeasibilityProblem(1, [AffineLMI(I2)], target_margin=-1.0)


def test_box_is_respected():
    # v I - 10 I >= t I wants v large; the box caps it at 3
    prob = FeasibilityProblem(1, [AffineLMI(-10 * I2, [(0, I2)])], box=([-3.0], [3.0]))
    res = solve_feasibility(prob)
    assert res.best_v[0] <= 3.0 + 1e-9
    assert res.achieved_margin == pytest.approx(-7.0, abs=1e-6)


# -- properties ----------------------------------------------------------------------

def test_planted_instances_recovered():
    rng = np.random.default_rng(0)
    for trial in range(200):
        dim = int(rng.integers(1, 21))
        nvars = int(rng.integers(1, 61))
        n_lmis = int(rng.integers(1, 4))
        prob, v_star = planted(rng, n_lmis, dim, nvars, slack=float(rng.uniform(0.1, 1.0)))
        res = solve_feasibility(prob, seed=trial)
        assert res.feasible, (trial, dim, nvars, res.status, res.achieved_margin)
        assert min(check_assignment(prob, res.v)) >= prob.target_margin - 1e-9


@given(st.integers(0, 2 ** 32 - 1))
def test_soundness(seed):
    """Whenever the solver says feasible, an independent eigensolver agrees."""
    rng = np.random.default_rng(seed)
    lmis = []
    for _ in range(3):
        B = rng.normal(size=(3, 3))
        C = rng.normal(size=(3, 3))
        lmis.append(AffineLMI(0.5 * (B + B.T), [(0, 0.5 * (C + C.T)), (1, np.eye(3) * rng.normal())]))
    prob = FeasibilityProblem(2, lmis, box=([-5, -5], [5, 5]), target_margin=0.05)
    res = solve_feasibility(prob)
    if res.feasible:
        S = [l.evaluate(res.v) for l in prob.lmis]
        assert min(np.linalg.eigvalsh(s)[0] for s in S) >= prob.target_margin - 1e-9
    else:
        assert res.achieved_margin < prob.target_margin


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100))
def test_scaling_covariance(seed, c):
    rng = np.random.default_rng(seed)
    B, C = rng.normal(size=(2, 3, 3))
    lmi = AffineLMI(0.5 * (B + B.T), [(0, 0.5 * (C + C.T))])
    scaled = AffineLMI(c * lmi.constant, [(0, c * lmi.coeffs[0][1])])
    v = rng.normal(size=1)
    m = check_assignment(FeasibilityProblem(1, [lmi]), v)[0]
    ms = check_assignment(FeasibilityProblem(1, [scaled]), v)[0]
    assert ms == pytest.approx(c * m, rel=1e-9, abs=1e-12)


def test_deterministic():
    rng = np.random.default_rng(1)
    prob, _ = planted(rng, 4, 5, 8, 0.3)
    a = solve_feasibility(prob, seed=3)
    b = solve_feasibility(prob, seed=3)
    assert a.status == b.status and np.array_equal(a.v, b.v) and a.iterations == b.iterations


def test_blocks_and_lmis_views_agree():
    rng = np.random.default_rng(2)
    prob, _ = planted(rng, 5, 3, 4, 0.5)
    ids, F0, F = prob.stacked()[0]
    blocked = FeasibilityProblem(4, blocks=[(F0, F)])
    v = rng.normal(size=4)
    np.testing.assert_allclose(check_assignment(prob, v), check_assignment(blocked, v), atol=1e-12)
    assert solve_feasibility(blocked).achieved_margin == pytest.approx(solve_feasibility(prob).achieved_margin,
                                                                       abs=1e-7)


def test_dump_load_roundtrip():
    rng = np.random.default_rng(4)
    prob, _ = planted(rng, 3, 2, 3, 0.2)
    prob.target_margin = 0.1
    again = load_problem(dump_problem(prob))
    assert again.nvars == prob.nvars and again.target_margin == 0.1
    v = rng.normal(size=3)
    assert check_assignment(again, v) == check_assignment(prob, v)
    with pytest.raises(ValueError):
        load_problem("nonsense 1 2\n")


def test_lmi_from_terms_drops_zero():
    lmi = lmi_from_terms(I2, [(0, np.zeros((2, 2))), (1, I2)])
    assert [i for i, _ in lmi.coeffs] == [1]
