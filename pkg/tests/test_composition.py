import math

import numpy as np
import pytest

import nhpkit as nk
from nhpkit.composition import composite_barbalat


@pytest.fixture(scope="module")
def linear_series():
    return nk.compose_series(nk.linear_hp(1.0), nk.linear_hp(1.0))


@pytest.fixture(scope="module")
def linear_certs():
    up, down = nk.linear_hp(1.0), nk.linear_hp(1.0)
    return {
        "up_nhp": nk.certificate_catalog(up, "nhp"),
        "up_anhp": nk.certificate_catalog(up, "anhp"),
        "down_nhp": nk.certificate_catalog(down, "nhp"),
        "down_anhp": nk.certificate_catalog(down, "anhp"),
    }


def sim(model, sig, d_x, **kw):
    return nk.simulate(model, sig, np.zeros(d_x), nk.SolverConfig(**kw))


def test_zero_input_all_signals_zero(linear_series):
    traj = sim(linear_series.model, nk.make_signal("constant", value=0.0), 2,
               horizon=5.0)
    assert np.max(np.abs(traj.x)) == 0.0
    assert np.max(np.abs(traj.y)) == 0.0
    y1, dy1 = linear_series.intermediate(traj)
    assert np.max(np.abs(y1)) == 0.0 and np.max(np.abs(dy1)) == 0.0


def test_series_frequency_response_is_transfer_product(linear_series):
    # composite of two s/(s+1) stages: |H| = w^2/(1+w^2) at frequency w
    for w in (0.5, 2.0):
        period = 2 * math.pi / w
        sig = nk.make_signal("sinusoid", amplitude=1.0, omega=w)
        traj = sim(linear_series.model, sig, 2, horizon=30.0 + 2 * period,
                   rtol=1e-10, atol=1e-12)
        mask = traj.t >= 30.0
        t, y = traj.t[mask], traj.y[mask]
        coef, *_ = np.linalg.lstsq(np.column_stack([np.sin(w * t), np.cos(w * t)]),
                                   y, rcond=None)
        expect = abs((1j * w) ** 2 / (1j * w + 1.0) ** 2)
        assert abs(np.hypot(*coef) - expect) < 1e-4


def test_degenerate_slow_upstream_passes_input_through():
    # a very slow upstream stage barely moves its state, so y1 ~ u and the
    # composite tracks the downstream system alone
    series = nk.compose_series(nk.linear_hp(1e-3), nk.linear_hp(1.0))
    sig = nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)
    comp = sim(series.model, sig, 2, horizon=20.0)
    alone = sim(nk.linear_hp(1.0), sig, 1, horizon=20.0)
    assert np.max(np.abs(comp.y - alone.y)) < 0.05


def test_staged_equals_monolithic(linear_series):
    sig = nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)
    cfg = nk.SolverConfig(horizon=20.0)
    mono = nk.simulate(linear_series.model, sig, np.zeros(2), cfg)
    staged = nk.staged_simulate(linear_series, sig, np.zeros(2), cfg)
    assert np.max(np.abs(mono.y - staged.y)) < 1e-6


def test_staged_equals_monolithic_nonlinear_stage():
    series = nk.compose_series(nk.linear_hp(1.0), nk.sinh_hp(1.0))
    sig = nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)
    cfg = nk.SolverConfig(horizon=20.0)
    mono = nk.simulate(series.model, sig, np.zeros(2), cfg)
    staged = nk.staged_simulate(series, sig, np.zeros(2), cfg)
    assert np.max(np.abs(mono.y - staged.y)) < 1e-6


def test_composite_certificate_gain_product(linear_series, linear_certs):
    comp = nk.composite_certificate(linear_series, linear_certs["up_anhp"],
                                    linear_certs["down_nhp"])
    assert math.isclose(comp.gain, 2.0, rel_tol=1e-12)  # 1 * 2
    assert comp.scale == 1.0  # both quadratic costs have unit coefficient


def test_composite_margin_is_scaled_sum_of_component_margins(linear_series,
                                                             linear_certs):
    sig = nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)
    traj = sim(linear_series.model, sig, 2, horizon=20.0)
    comp = nk.composite_certificate(linear_series, linear_certs["up_anhp"],
                                    linear_certs["down_nhp"])
    up_m = linear_certs["up_anhp"].margins(linear_series.upstream_trajectory(traj))
    dn_m = linear_certs["down_nhp"].margins(linear_series.downstream_trajectory(traj))
    direct = comp.margins(traj)
    assert np.max(np.abs(direct - (comp.scale * up_m + dn_m))) < 1e-10


def test_supply_rate_additivity(linear_series, linear_certs):
    sig = nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)
    traj = sim(linear_series.model, sig, 2, horizon=20.0)
    comp = nk.composite_certificate(linear_series, linear_certs["up_anhp"],
                                    linear_certs["down_nhp"])
    s_comp = np.trapezoid(comp.supply_series(traj), traj.t)
    s_up = np.trapezoid(
        linear_certs["up_anhp"].supply_series(linear_series.upstream_trajectory(traj)),
        traj.t)
    s_dn = np.trapezoid(
        linear_certs["down_nhp"].supply_series(linear_series.downstream_trajectory(traj)),
        traj.t)
    assert abs(s_comp - (comp.scale * s_up + s_dn)) < 1e-9 * (1 + abs(s_comp))


def test_composite_certificates_pass_pointwise(linear_series, linear_certs):
    sig = nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)
    traj = sim(linear_series.model, sig, 2, horizon=20.0)
    for down_key in ("down_nhp", "down_anhp"):
        comp = nk.composite_certificate(linear_series, linear_certs["up_anhp"],
                                        linear_certs[down_key])
        rep = nk.evaluate_certificate(comp, traj)
        assert rep.pass_pointwise and rep.pass_integral


def test_composition_report_all_stages_pass(linear_series, linear_certs):
    probes = (nk.Probe("sine", nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)),
              nk.Probe("ramp", nk.make_signal("ramp_hold", slope=0.5, t_hold=5.0)))
    rep = nk.composition_theorem_report(
        linear_series, linear_certs["up_nhp"], linear_certs["up_anhp"],
        linear_certs["down_nhp"], linear_certs["down_anhp"], probes)
    assert rep.passed
    assert rep.exact_composite
    assert math.isclose(rep.gain_product, 2.0, rel_tol=1e-12)
    names = [s.name for s in rep.probes[0].stages]
    assert names == ["up_nhp", "up_anhp", "down_nhp", "down_anhp",
                     "composite_nhp_pointwise", "composite_anhp_pointwise",
                     "composite_nhp_prefix", "composite_anhp_prefix"]
    payload = rep.to_json_dict()
    assert payload["pass"] is True
    assert len(payload["probes"]) == 2


def test_empirical_prefix_gain_below_product(linear_series, linear_certs):
    probes = (nk.Probe("sine", nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)),)
    rep = nk.composition_theorem_report(
        linear_series, linear_certs["up_nhp"], linear_certs["up_anhp"],
        linear_certs["down_nhp"], linear_certs["down_anhp"], probes)
    stage = {s.name: s for s in rep.probes[0].stages}["composite_nhp_prefix"]
    # the measured alpha-integral ratio never exceeds the certified product
    # coefficient (gain^2 for the quadratic costs)
    assert stage.detail["max_prefix_ratio"] <= rep.gain_product**2 + 1e-9


def test_weakened_component_is_pinpointed(linear_series, linear_certs):
    weak_up_anhp = nk.certificate_catalog(nk.linear_hp(1.0), "anhp", gamma=1.55)
    probes = (nk.Probe("ramp", nk.make_signal("ramp_hold", slope=0.5, t_hold=5.0)),)
    rep = nk.composition_theorem_report(
        linear_series, linear_certs["up_nhp"], weak_up_anhp,
        linear_certs["down_nhp"], linear_certs["down_anhp"], probes)
    assert not rep.passed
    stage = {s.name: s for s in rep.probes[0].stages}
    assert not stage["up_anhp"].passed
    assert stage["up_nhp"].passed
    assert stage["down_nhp"].passed


def test_incompatible_gain_exponents_degrade_to_ratio_mode():
    series = nk.compose_series(nk.linear_hp(1.0), nk.cubic_hp(1.0))
    up_nhp = nk.certificate_catalog(series.up, "nhp")
    up_anhp = nk.certificate_catalog(series.up, "anhp")
    down_nhp = nk.certificate_catalog(series.down, "nhp")  # |.|^(4/3) input gain
    down_anhp = nk.fit_gain(series.down, "anhp").certificate
    with pytest.raises(nk.IncompatibleGainsError):
        nk.composite_certificate(series, up_anhp, down_nhp)
    probes = (nk.Probe("sine", nk.make_signal("sinusoid", amplitude=0.5, omega=1.0)),)
    rep = nk.composition_theorem_report(series, up_nhp, up_anhp, down_nhp,
                                        down_anhp, probes)
    assert not rep.exact_composite
    stage_names = [s.name for s in rep.probes[0].stages]
    assert "empirical_ratio" in stage_names
    assert math.isnan(rep.gain_product)


def test_composite_barbalat_on_ramp(linear_series, linear_certs):
    sig = nk.make_signal("ramp_hold", slope=0.5, t_hold=10.0)
    traj = sim(linear_series.model, sig, 2, horizon=40.0)
    comp_nhp = nk.composite_certificate(linear_series, linear_certs["up_anhp"],
                                        linear_certs["down_nhp"])
    comp_anhp = nk.composite_certificate(linear_series, linear_certs["up_anhp"],
                                         linear_certs["down_anhp"])
    rep = composite_barbalat(linear_series, comp_nhp, comp_anhp, traj)
    assert rep.verdict == "PASS"
    assert rep.tail_sup_y <= 1e-3
