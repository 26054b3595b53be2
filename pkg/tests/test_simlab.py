import numpy as np
import pytest
from scipy.integrate import solve_ivp

from tcontract.simlab import (
    EQUILIBRIUM,
    LIMIT_CYCLE,
    NoCycle,
    NoReturnError,
    OrbitEstimate,
    Section,
    boundary_flow_check,
    detect_limit_cycle,
    disturbance_tube_check,
    integrate,
    integrate_fn,
    poincare_contraction_test,
    poincare_map,
)
from tcontract.sysmodel import bind_parameters, builtin, parse_system


def two_state(dyn1, dyn2, region="region ball 1.0\nbox -1 1 -1 1\n"):
    return parse_system(f"system s\nstate x y\ndyn x' = {dyn1}\ndyn y' = {dyn2}\n{region}")


@pytest.fixture(scope="module")
def mg12_orbit(mg12):
    orb = detect_limit_cycle(mg12, [0.5, 0.5])
    assert isinstance(orb, OrbitEstimate)
    return orb


# -- integration -----------------------------------------------------------------------

def test_exponential_decay():
    tr = integrate_fn(lambda x: -x, [1.0], 1.0, tol=1e-12)
    assert tr.final[0] == pytest.approx(np.exp(-1.0), rel=1e-10)
    assert tr.at(0.5)[0] == pytest.approx(np.exp(-0.5), rel=1e-8)


def test_circular_radius_tends_to_one():
    sys = builtin("circular")
    for x0 in ([0.1, 0.0], [1.9, 0.3]):
        assert np.linalg.norm(integrate(sys, x0, 30.0).final) == pytest.approx(1.0, abs=1e-7)


def test_mg08_converges(mg08):
    x = integrate(mg08, [1.0, 1.0], 200.0).final
    assert np.linalg.norm(mg08.rhs(x)) < 1e-8


def test_fixed_step_fifth_order():
    errs = []
    for h in (0.1, 0.05):
        tr = integrate_fn(lambda x: -x, [1.0], 1.0, fixed_step=h)
        errs.append(abs(tr.final[0] - np.exp(-1.0)))
    # fifth order propagation: halving h divides the error by about 2^5
    assert 20 < errs[0] / errs[1] < 50


VDP1 = bind_parameters(builtin("van_der_pol"), {"mu": 1.0})


def test_time_reversal():
    sys = VDP1
    x0 = np.array([0.5, -0.3])
    fwd = integrate(sys, x0, 3.0, tol=1e-12)
    back = integrate(sys, fwd.final, 3.0, tol=1e-12, backward=True)
    np.testing.assert_allclose(back.final, x0, atol=1e-8)


def test_matches_scipy_oracle():
    sys = VDP1
    ref = solve_ivp(lambda t, x: sys.rhs(x), (0, 10), [2.0, 0.0], rtol=1e-12, atol=1e-12, method="DOP853")
    np.testing.assert_allclose(integrate(sys, [2.0, 0.0], 10.0, tol=1e-11).final, ref.y[:, -1], atol=1e-7)


def test_integration_input_checks():
    with pytest.raises(ValueError):
        integrate_fn(lambda x: -x, [np.nan], 1.0)
    with pytest.raises(ValueError):
        integrate_fn(lambda x: -x, [1.0], 0.0)
    with pytest.raises(ValueError):
        integrate_fn(lambda x: -x, [1.0], 1.0, tol=0.0)
    tr = integrate_fn(lambda x: -x, [1.0], 1.0)
    with pytest.raises(ValueError):
        tr.at(2.0)


def test_blowup_flagged():
    tr = integrate_fn(lambda x: x * x, [1.0], 2.0)
    assert tr.divergent


def test_trajectory_csv():
    tr = integrate(builtin("linear_stable_2d"), [1.0, 0.5], 1.0)
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,x1,x2"
    assert len(lines) == len(tr.times) + 1
    assert [float(v) for v in lines[-1].split(",")] == [tr.times[-1], *tr.final]


# -- Poincare maps -----------------------------------------------------------------------------

def test_circle_return():
    sys = builtin("circular")
    sec = Section.make([0.0, 0.0], [0.0, 1.0])
    x, T = poincare_map(sys, sec, [1.0, 0.0])
    assert T == pytest.approx(2 * np.pi, rel=1e-8)
    np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-8)


def test_return_moves_towards_cycle():
    sys = builtin("circular")
    x, _ = poincare_map(sys, Section.make([0.0, 0.0], [0.0, 1.0]), [0.5, 0.0])
    assert 0.5 < x[0] < 1.0 and abs(x[1]) < 1e-9
    # radial equation r' = r - r^3 solved in closed form over one revolution
    r = 0.5 / np.sqrt(0.25 + 0.75 * np.exp(-4 * np.pi))
    assert x[0] == pytest.approx(r, rel=1e-7)


def test_no_return_for_stable_node():
    sys = builtin("linear_stable_2d")
    with pytest.raises(NoReturnError):
        poincare_map(sys, Section.make([0.5, 0.0], [-1.0, 0.0]), [0.5, 0.0], t_limit=50)


def test_section_must_be_transversal():
    sys = builtin("circular")
    with pytest.raises(ValueError):
        poincare_map(sys, Section.make([0.0, 0.0], [0.0, -1.0]), [1.0, 0.0])
    with pytest.raises(ValueError):
        Section.make([0, 0], [0, 0])


# -- limit cycle detection ---------------------------------------------------------------------------

def test_detect_equilibrium(mg08):
    out = detect_limit_cycle(mg08, [0.5, 0.5])
    assert isinstance(out, NoCycle) and out.kind == EQUILIBRIUM


def test_detect_mg12_cycle(mg12_orbit):
    assert mg12_orbit.kind == LIMIT_CYCLE
    assert len(mg12_orbit.periods) >= 5
    np.testing.assert_allclose(mg12_orbit.at(mg12_orbit.period), mg12_orbit.anchor, atol=1e-6)


def test_van_der_pol_period():
    sys = VDP1
    orb = detect_limit_cycle(sys, [2.0, 0.0])
    assert isinstance(orb, OrbitEstimate)

    # oracle: scipy event detection on x2 = 0 crossings with x1 > 0, after a long transient
    def ev(t, x):
        return x[1]
    ev.direction = -1
    sol = solve_ivp(lambda t, x: sys.rhs(x), (0, 200), [2.0, 0.0], events=ev, rtol=1e-11, atol=1e-12,
                    method="DOP853")
    T_ref = np.diff(sol.t_events[0])[-1]
    assert T_ref == pytest.approx(6.6633, abs=1e-3)
    assert orb.period == pytest.approx(T_ref, rel=1e-6)


def test_periods_consistent(mg12_orbit):
    p = np.array(mg12_orbit.periods[-5:])
    assert np.ptp(p) <= 1e-3 * p.mean()


def test_orbit_csv(mg12_orbit):
    text = mg12_orbit.to_csv(("phi", "psi"))
    head, cols = text.splitlines()[:2]
    assert head.startswith("# period=") and float(head.split()[1].split("=")[1]) == mg12_orbit.period
    assert cols == "t,phi,psi"


# -- corroboration ------------------------------------------------------------------------------

def test_reference_poincare_contraction(mg12, reference_cert, mg12_orbit):
    rep = poincare_contraction_test(mg12, reference_cert, mg12_orbit, n_pairs=10, spread=0.05, seed=0)
    assert rep.passed and rep.max_ratio < 1 and len(rep.ratios) == 10


def test_identity_return_map_is_not_contracting(mg12, reference_cert, mg12_orbit):
    rep = poincare_contraction_test(mg12, reference_cert, mg12_orbit, n_pairs=5, return_map=lambda x: x)
    assert not rep.passed
    np.testing.assert_allclose(rep.ratios, 1.0, rtol=1e-12)


def test_zero_distance_pairs_skipped(mg12, reference_cert, mg12_orbit):
    rep = poincare_contraction_test(mg12, reference_cert, mg12_orbit, n_pairs=4, spread=0.0,
                                    return_map=lambda x: x)
    assert rep.skipped == 4 and len(rep.ratios) == 0 and not rep.passed


def test_tube_zero_disturbance(mg12, reference_cert, mg12_orbit):
    rep = disturbance_tube_check(mg12, reference_cert, mg12_orbit, 0.0, n_runs=3, horizon=10, transient=2,
                                 grid_per_axis=60)
    assert rep.bound == 0.0
    assert rep.empirical_post < 1e-3


def test_tube_bound_linear_in_d(mg12, reference_cert, mg12_orbit):
    a = disturbance_tube_check(mg12, reference_cert, mg12_orbit, 0.01, n_runs=2, horizon=4, transient=1,
                               grid_per_axis=60)
    b = disturbance_tube_check(mg12, reference_cert, mg12_orbit, 0.02, n_runs=2, horizon=4, transient=1,
                               grid_per_axis=60)
    assert b.bound == pytest.approx(2 * a.bound, rel=1e-12)
    with pytest.raises(ValueError):
        disturbance_tube_check(mg12, reference_cert, mg12_orbit, -1.0)


def test_tube_reproducible(mg12, reference_cert, mg12_orbit):
    kw = dict(n_runs=2, horizon=3, transient=1, grid_per_axis=40, seed=5)
    a = disturbance_tube_check(mg12, reference_cert, mg12_orbit, 0.05, **kw)
    b = disturbance_tube_check(mg12, reference_cert, mg12_orbit, 0.05, **kw)
    assert a.as_dict() == b.as_dict()


# -- boundary flow ------------------------------------------------------------------------

def test_boundary_inflow_passes():
    assert boundary_flow_check(two_state("-x", "-y")).passed


def test_boundary_outflow_fails():
    rep = boundary_flow_check(two_state("x", "y"))
    assert not rep.passed and rep.n_violations == rep.n_points


def test_mg_ball_inflow(mg12):
    from tcontract.synth import ball_region
    assert boundary_flow_check(mg12, ball_region(mg12, 10.0, None)).passed
    # smaller balls leak: d|x|^2/dt < 0 fails near (-2, -2)
    small = boundary_flow_check(mg12, ball_region(mg12, 3.0, None))
    assert not small.passed and np.all(small.violations[:, 0] < 0)
