import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

import nhpkit as nk


def sim(system, sig, x0=None, **cfg_kw):
    cfg = nk.SolverConfig(**cfg_kw)
    x0 = np.zeros(system.d_x) if x0 is None else x0
    return nk.simulate(system, sig, x0, cfg)


# ---------------------------------------------------------------------------
# catalog dynamics
# ---------------------------------------------------------------------------


def test_linear_hp_pointwise_values():
    s = nk.linear_hp(1.0)
    x = np.array([0.0])
    assert float(s.f(x, 1.0, 0.0)[0]) == 1.0
    assert float(s.g(x, 1.0)) == 1.0
    s2 = nk.linear_hp(2.0)
    x = np.array([3.0])
    assert float(s2.f(x, 3.0, 0.0)[0]) == 0.0
    assert float(s2.g(x, 3.0)) == 0.0


def test_linear_hp_rejects_bad_rate():
    with pytest.raises(nk.CatalogError):
        nk.linear_hp(0.0)
    with pytest.raises(nk.CatalogError):
        nk.linear_hp(-1.0)


def test_linear_hp_relaxation_closed_form():
    # constant input from rest: y(t) = exp(-lam t)
    for lam in (0.5, 2.0):
        traj = sim(nk.linear_hp(lam), nk.make_signal("constant", value=1.0),
                   horizon=5.0, rtol=1e-10, atol=1e-12)
        assert np.max(np.abs(traj.y - np.exp(-lam * traj.t))) < 1e-8


def test_linear_hp_step_decays_exponentially_after_rise():
    lam = 1.0
    traj = sim(nk.linear_hp(lam), nk.make_signal("step", amplitude=1.0, width=0.1),
               horizon=6.0, rtol=1e-10, atol=1e-12)
    sel = traj.t >= 1.0
    t, y = traj.t[sel], traj.y[sel]
    ratio = y[-1] / y[0]
    assert math.isclose(ratio, math.exp(-lam * (t[-1] - t[0])), rel_tol=1e-7)


def test_linear_hp_sine_steady_state_matches_transfer_function():
    # s/(s+1) at omega=1: amplitude 1/sqrt(2), phase +pi/4
    traj = sim(nk.linear_hp(1.0), nk.make_signal("sinusoid", amplitude=1.0, omega=1.0),
               horizon=40.0, rtol=1e-10, atol=1e-12)
    mask = traj.t >= 30.0
    t, y = traj.t[mask], traj.y[mask]
    coef, *_ = np.linalg.lstsq(np.column_stack([np.sin(t), np.cos(t)]), y, rcond=None)
    amp, phase = np.hypot(*coef), np.arctan2(coef[1], coef[0])
    assert abs(amp - 1.0 / math.sqrt(2.0)) < 1e-4
    assert abs(phase - math.pi / 4.0) < 1e-4


def test_sinh_hp_pointwise_values():
    s = nk.sinh_hp(1.0)
    assert float(s.f(np.array([2.0]), 2.0, 0.0)[0]) == 0.0
    got = float(s.f(np.array([0.0]), 1.0, 0.0)[0])
    assert math.isclose(got, math.sinh(1.0), rel_tol=1e-15)


def test_sinh_hp_small_signal_matches_linear():
    amp = 1e-3
    sig = nk.make_signal("sinusoid", amplitude=amp, omega=1.0)
    y_sinh = sim(nk.sinh_hp(1.0), sig, rtol=1e-11, atol=1e-14).y
    y_lin = sim(nk.linear_hp(1.0), sig, rtol=1e-11, atol=1e-14).y
    assert np.max(np.abs(y_sinh - y_lin)) < 1e-6 * amp


def test_linearization_consistency_ratio():
    # the gap to the linear filter shrinks ~ amplitude^3 (cubic remainder)
    gaps = {}
    for amp in (1e-2, 1e-3):
        sig = nk.make_signal("sinusoid", amplitude=amp, omega=1.0)
        y_s = sim(nk.sinh_hp(1.0), sig, rtol=1e-12, atol=1e-15).y
        y_l = sim(nk.linear_hp(1.0), sig, rtol=1e-12, atol=1e-15).y
        gaps[amp] = np.max(np.abs(y_s - y_l))
    assert gaps[1e-3] < 2e-3 * gaps[1e-2]


def test_cubic_hp_pointwise_values():
    s = nk.cubic_hp(2.0)
    assert float(s.f(np.array([0.0]), 0.0, 0.0)[0]) == 0.0
    assert float(s.f(np.array([0.0]), 2.0, 0.0)[0]) == 16.0


def test_cubic_hp_separable_closed_form():
    # xdot = (1-x)^3 from 0: x(t) = 1 - (1+2t)^(-1/2)
    traj = sim(nk.cubic_hp(1.0), nk.make_signal("constant", value=1.0),
               horizon=4.0, rtol=1e-11, atol=1e-13)
    expect = 1.0 - (1.0 + 2.0 * traj.t) ** -0.5
    assert np.max(np.abs(traj.x[:, 0] - expect)) < 1e-6
    assert abs(traj.x[-1, 0] - 2.0 / 3.0) < 1e-6


def test_sector_identity_sector_equals_linear():
    spec = nk.SectorSpec("tanh_blend", 1.0, 1.0)
    s = nk.sector_hp(1.0, spec)
    lin = nk.linear_hp(1.0)
    x = np.array([0.3])
    assert math.isclose(float(s.f(x, 1.0, 0.0)[0]), float(lin.f(x, 1.0, 0.0)[0]),
                        rel_tol=1e-15)


def test_sector_rational_blend_value():
    spec = nk.SectorSpec("rational_blend", 1.0, 2.0)
    assert math.isclose(float(spec.phi(1.0)), 1.5, rel_tol=1e-15)


@pytest.mark.parametrize("shape", ["saturated_linear", "rational_blend", "tanh_blend"])
def test_sector_membership_grid(shape):
    spec = nk.SectorSpec(shape, 1.0, 2.0)
    q = np.linspace(-10.0, 10.0, 10_000)
    p = spec.phi(q)
    assert np.max((p - q) * (p - 2.0 * q)) <= 1e-12


def test_sector_construction_rejects_out_of_sector_shape():
    bad = SimpleNamespace(shape="custom", alpha=1.0, beta=1.5,
                          phi=lambda q: 2.0 * np.asarray(q, dtype=float))
    with pytest.raises(nk.CatalogError):
        nk.sector_hp(1.0, bad)


def test_sector_spec_validation():
    with pytest.raises(nk.CatalogError):
        nk.SectorSpec("rational_blend", 0.0, 2.0)
    with pytest.raises(nk.CatalogError):
        nk.SectorSpec("rational_blend", 2.0, 1.0)
    with pytest.raises(nk.CatalogError):
        nk.SectorSpec("nope", 1.0, 2.0)


def test_linear_pi_recovers_critically_damped_response():
    # kp=2, ki=1, no disturbance, y0=1: y(t) = (1+t) e^{-t}
    s = nk.linear_pi(2.0, 1.0)
    traj = sim(s, nk.make_signal("constant", value=0.0), x0=[1.0, 0.0],
               horizon=10.0, rtol=1e-11, atol=1e-13)
    expect = (1.0 + traj.t) * np.exp(-traj.t)
    assert np.max(np.abs(traj.y - expect)) < 1e-8


def test_pi_equilibrium_stays_put():
    s = nk.linear_pi(2.0, 1.0)
    traj = sim(s, nk.make_signal("constant", value=0.0), x0=[0.0, 0.0], horizon=5.0)
    assert np.max(np.abs(traj.y)) == 0.0


def test_pi_spec_grid_checks_reject_bad_feedback():
    with pytest.raises(nk.CatalogError):
        nk.PiSpec("bad-slope", G=lambda y: np.asarray(y) ** 3 / 3.0,
                  g=lambda y: np.asarray(y) ** 2, F=lambda y: np.asarray(y) ** 2 / 2,
                  f=lambda y: np.asarray(y), g0=0.5)
    with pytest.raises(nk.CatalogError):
        nk.PiSpec("bad-sign", G=lambda y: 2.0 * np.asarray(y),
                  g=lambda y: 2.0 * np.ones_like(np.asarray(y, dtype=float)),
                  F=lambda y: -np.asarray(y, dtype=float) ** 2 / 2,
                  f=lambda y: -np.asarray(y, dtype=float), g0=2.0)


def test_nonsmooth_pi_integral_term():
    s0 = nk.nonsmooth_pi(1.0, 1.0, 1.0, 0.0)
    f = s0.params["pi"].f
    assert float(f(2.0)) == 3.0  # ki*y + ks on y > 0
    s1 = nk.nonsmooth_pi(1.0, 1.0, 1.0, 1e-3)
    assert float(s1.params["pi"].f(0.0)) == 0.0  # tanh(0) = 0


def test_nonsmooth_pi_smoothing_widths_converge():
    sig = nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)
    runs = {}
    for delta in (1e-2, 1e-3, 1e-4):
        runs[delta] = sim(nk.nonsmooth_pi(1.0, 1.0, 1.0, delta), sig,
                          x0=[0.5, 0.0], horizon=10.0).y
    gap_coarse = np.max(np.abs(runs[1e-2] - runs[1e-3]))
    gap_fine = np.max(np.abs(runs[1e-3] - runs[1e-4]))
    assert gap_fine < 1e-2
    assert gap_fine < gap_coarse  # Cauchy trend as the width shrinks


def test_make_system_catalog_roundtrip():
    assert nk.catalog_names() == ("cubic_hp", "linear_hp", "nonsmooth_pi", "pi",
                                  "sector_hp", "sinh_hp")
    s = nk.make_system("sector_hp", {"lambda": 2.0, "alpha": 1.0, "beta": 2.0,
                                     "phi": "tanh_blend"})
    assert s.name == "sector_hp" and s.params["lam"] == 2.0
    with pytest.raises(nk.CatalogError):
        nk.make_system("bogus", {})


# ---------------------------------------------------------------------------
# output derivative
# ---------------------------------------------------------------------------


def test_output_derivative_formulas():
    lin = nk.linear_hp(1.0)
    # ydot = udot - lam*y
    assert float(nk.output_derivative(lin, np.array([0.0]), 1.0, 0.5)) == -0.5
    cub = nk.cubic_hp(1.0)
    assert float(nk.output_derivative(cub, np.array([-1.0]), 1.0, 0.0)) == -8.0


@pytest.mark.parametrize("factory,x0", [
    (lambda: nk.linear_hp(1.0), [0.0]),
    (lambda: nk.sinh_hp(1.0), [0.0]),
    (lambda: nk.cubic_hp(1.0), [0.0]),
    (lambda: nk.sector_hp(1.0, nk.SectorSpec("tanh_blend", 1.0, 2.0)), [0.0]),
    (lambda: nk.linear_pi(2.0, 1.0), [0.3, 0.0]),
])
def test_output_derivative_matches_finite_differences(factory, x0):
    s = factory()
    sig = nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)
    traj = sim(s, sig, x0=x0, horizon=10.0, method="rk4",
               sample_dt=1e-3, fixed_step=5e-4)
    fd = nk.numeric_derivative(traj.trace("y"))
    assert np.max(np.abs(fd.v[1:-1] - traj.dy[1:-1])) < 1e-5


# ---------------------------------------------------------------------------
# simulation machinery
# ---------------------------------------------------------------------------


def test_zero_input_zero_state_is_identically_zero():
    traj = sim(nk.linear_hp(1.0), nk.make_signal("constant", value=0.0), horizon=5.0)
    assert np.max(np.abs(traj.x)) == 0.0
    assert np.max(np.abs(traj.y)) == 0.0


@pytest.mark.parametrize("factory,x0", [
    (lambda: nk.linear_hp(0.5), [0.0]),
    (lambda: nk.sinh_hp(1.0), [0.0]),
    (lambda: nk.cubic_hp(2.0), [0.0]),
    (lambda: nk.sector_hp(1.0, nk.SectorSpec("rational_blend", 1.0, 2.0)), [0.0]),
])
def test_equilibrium_preserved_under_constant_input(factory, x0):
    s = factory()
    # x0 chosen with y = 0; the state must remain there
    traj = sim(s, nk.make_signal("constant", value=0.7), x0=[0.7], horizon=10.0)
    assert np.max(np.abs(traj.y)) < 1e-12


def test_output_recomputed_from_state():
    s = nk.sinh_hp(1.0)
    traj = sim(s, nk.make_signal("sinusoid", amplitude=1.0, omega=1.0), horizon=5.0)
    expect = traj.u - traj.x[:, 0]
    assert np.array_equal(traj.y, expect)


def test_adaptive_solver_against_scipy_reference():
    s = nk.sinh_hp(1.0)
    sig = nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)
    traj = sim(s, sig, horizon=20.0, rtol=1e-10, atol=1e-12)
    sol = solve_ivp(lambda t, x: s.f(x, float(sig.value(t)), float(sig.derivative(t))),
                    (0.0, 20.0), [0.0], t_eval=traj.t, rtol=1e-11, atol=1e-13)
    assert np.max(np.abs(sol.y[0] - traj.x[:, 0])) < 1e-7


def test_adaptive_matches_tighter_tolerance_reference():
    s = nk.sinh_hp(1.0)
    sig = nk.make_signal("sinusoid", amplitude=5.0, omega=1.0)
    loose = sim(s, sig, horizon=10.0, rtol=1e-8, atol=1e-10)
    tight = sim(s, sig, horizon=10.0, rtol=1e-11, atol=1e-13)
    scale = np.max(np.abs(tight.y))
    assert np.max(np.abs(loose.y - tight.y)) < 10.0 * 1e-8 * scale


def test_rk4_step_halving_is_fourth_order():
    s = nk.linear_hp(1.0)
    sig = nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)

    def run(h):
        return sim(s, sig, horizon=10.0, method="rk4", sample_dt=0.1, fixed_step=h)

    ref = run(0.05 / 16.0)
    e1 = np.max(np.abs(run(0.05).y - ref.y))
    e2 = np.max(np.abs(run(0.025).y - ref.y))
    assert 12.0 < e1 / e2 < 20.0


def test_solver_metadata_recorded():
    traj = sim(nk.sinh_hp(1.0), nk.make_signal("sinusoid", amplitude=2.0, omega=1.0),
               horizon=5.0)
    assert traj.meta["method"] == "rk45"
    assert traj.meta["naccepted"] >= 500
    assert traj.meta["nrejected"] >= 0
    assert 0.0 < traj.meta["max_error_estimate"] <= 1.0


def test_divergence_guard_reports_last_valid_time():
    with pytest.raises(nk.SimulationDiverged) as err:
        sim(nk.sinh_hp(1.0), nk.make_signal("constant", value=60.0), horizon=1.0)
    assert err.value.t_last == 0.0

    # cap crossing mid-run on the linear filter
    with pytest.raises(nk.SimulationDiverged) as err:
        sim(nk.linear_hp(1.0), nk.make_signal("ramp_hold", slope=100.0, t_hold=3.0),
            horizon=3.0, y_cap=2.0)
    assert 0.0 < err.value.t_last < 3.0


def test_step_underflow_raises():
    with pytest.raises(nk.StepUnderflow):
        sim(nk.sinh_hp(1.0), nk.make_signal("sinusoid", amplitude=3.0, omega=3.0),
            horizon=2.0, rtol=1e-13, atol=1e-15, min_step=9e-3)


def test_initial_state_dimension_checked():
    with pytest.raises(nk.CatalogError):
        sim(nk.linear_pi(2.0, 1.0), nk.make_signal("constant", value=0.0), x0=[0.0])


def test_trajectory_csv_header(tmp_path):
    traj = sim(nk.linear_pi(2.0, 1.0), nk.make_signal("constant", value=0.0),
               x0=[1.0, 0.0], horizon=2.0)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    assert path.read_text().splitlines()[0] == "t,x0,x1,u,du,y,dy"


def test_solver_config_validation():
    with pytest.raises(nk.CatalogError):
        nk.SolverConfig(method="euler")
    with pytest.raises(nk.CatalogError):
        nk.SolverConfig(rtol=-1.0)
    with pytest.raises(nk.CatalogError):
        nk.SolverConfig(horizon=0.0)
    with pytest.raises(nk.CatalogError):
        nk.SolverConfig(min_step=1.0, max_step=0.5)
