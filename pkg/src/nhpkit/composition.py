"""Series interconnection of two SISO systems and composite certificates.

The upstream system feeds its output (with its analytic derivative) into
the downstream system.  When the upstream certificate bounds the output
derivative by the same power law that the downstream certificate charges
for its input derivative, the two supply rates telescope and the composite
inherits a product gain; the checks here verify that conclusion along
concrete trajectories instead of symbolically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .certificates import (
    BarbalatThresholds,
    Certificate,
    CertificateError,
    Probe,
    SupplyRate,
    VerdictReport,
    barbalat_verdict,
    evaluate_certificate,
    _cumtrapz,
)
from .signals import SampledSignal
from .systems import SolverConfig, SystemModel, Trajectory, simulate, trajectory_from_arrays

__all__ = [
    "IncompatibleGainsError",
    "SeriesSystem",
    "compose_series",
    "staged_simulate",
    "CompositeCertificate",
    "composite_certificate",
    "composition_theorem_report",
    "CompositionReport",
]


class IncompatibleGainsError(CertificateError):
    """The component gain functions do not telescope over the same exponent."""


@dataclass(frozen=True)
class SeriesSystem:
    """Upstream system H driving downstream system G, with stacked state."""

    up: SystemModel
    down: SystemModel
    model: SystemModel

    @property
    def d_up(self) -> int:
        return self.up.d_x

    def split(self, x):
        return x[..., : self.d_up], x[..., self.d_up:]

    def intermediate(self, traj: Trajectory):
        """(y1, dy1) of the upstream stage along a composite trajectory."""
        x_up, _ = self.split(traj.x)
        y1 = np.asarray(self.up.g(x_up, traj.u), dtype=float)
        dy1 = np.asarray(self.up.output_derivative(x_up, traj.u, traj.du), dtype=float)
        return y1, dy1

    def upstream_trajectory(self, traj: Trajectory) -> Trajectory:
        x_up, _ = self.split(traj.x)
        return trajectory_from_arrays(self.up, traj.t, x_up, traj.u, traj.du, traj.meta)

    def downstream_trajectory(self, traj: Trajectory) -> Trajectory:
        x_up, x_dn = self.split(traj.x)
        y1, dy1 = self.intermediate(traj)
        return trajectory_from_arrays(self.down, traj.t, x_dn, y1, dy1, traj.meta)


def compose_series(up: SystemModel, down: SystemModel) -> SeriesSystem:
    """Stack two SISO systems in series; the intermediate signal and its
    derivative are exposed through :meth:`SeriesSystem.intermediate`."""
    d_up = up.d_x

    def f(x, u, udot):
        x_u, x_d = x[..., :d_up], x[..., d_up:]
        y1 = up.g(x_u, u)
        dy1 = up.output_derivative(x_u, u, udot)
        return np.concatenate(
            [np.asarray(up.f(x_u, u, udot), dtype=float),
             np.asarray(down.f(x_d, y1, dy1), dtype=float)],
            axis=-1,
        )

    def g(x, u):
        x_u, x_d = x[..., :d_up], x[..., d_up:]
        return down.g(x_d, up.g(x_u, u))

    def dg_dx(x, u):
        x_u, x_d = x[..., :d_up], x[..., d_up:]
        y1 = up.g(x_u, u)
        outer = np.asarray(down.dg_du(x_d, y1), dtype=float)
        part_up = outer[..., None] * np.asarray(up.dg_dx(x_u, u), dtype=float)
        part_dn = np.asarray(down.dg_dx(x_d, y1), dtype=float)
        return np.concatenate([part_up, part_dn], axis=-1)

    def dg_du(x, u):
        x_u, x_d = x[..., :d_up], x[..., d_up:]
        y1 = up.g(x_u, u)
        return down.dg_du(x_d, y1) * up.dg_du(x_u, u)

    model = SystemModel(
        name=f"{up.name}>>{down.name}",
        d_x=up.d_x + down.d_x,
        params={"up": up.params, "down": down.params},
        f=f,
        g=g,
        dg_dx=dg_dx,
        dg_du=dg_du,
    )
    return SeriesSystem(up=up, down=down, model=model)


def staged_simulate(series: SeriesSystem, sig, x0, cfg: SolverConfig) -> Trajectory:
    """Simulate the upstream stage alone, then drive the downstream stage
    with a C1 interpolation of the upstream output.  Cross-check for the
    monolithic stacked simulation."""
    x0 = np.asarray(x0, dtype=float)
    up_traj = simulate(series.up, sig, x0[: series.d_up], cfg)
    bridge = SampledSignal(up_traj.t, up_traj.y, up_traj.dy)
    down_traj = simulate(series.down, bridge, x0[series.d_up:], cfg)
    x = np.concatenate([up_traj.x, down_traj.x], axis=1)
    meta = {**up_traj.meta, "staged": True}
    return trajectory_from_arrays(series.model, up_traj.t, x, up_traj.u, up_traj.du, meta)


# ---------------------------------------------------------------------------
# composite certificates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompositeCertificate:
    """Sum-of-supply-rates certificate for a series interconnection.

    Storage is scale*V_up + V_down; the supply keeps the upstream input
    term (rescaled) and the downstream output cost, the intermediate terms
    cancelling exactly because scale * alpha_up == beta_down.  Carries the
    same evaluation surface as :class:`Certificate`, so the pointwise,
    integral and convergence checks apply unchanged.
    """

    series: SeriesSystem
    cert_up: Certificate
    cert_down: Certificate
    supply: "object"
    scale: float
    form: str
    gain: float
    info: dict = field(default_factory=dict)

    def _parts(self, traj: Trajectory):
        return (self.series.upstream_trajectory(traj),
                self.series.downstream_trajectory(traj))

    def storage_series(self, traj: Trajectory) -> np.ndarray:
        up, dn = self._parts(traj)
        return (self.scale * self.cert_up.storage_series(up)
                + self.cert_down.storage_series(dn))

    def vdot_series(self, traj: Trajectory) -> np.ndarray:
        up, dn = self._parts(traj)
        return (self.scale * self.cert_up.vdot_series(up)
                + self.cert_down.vdot_series(dn))

    def supply_series(self, traj: Trajectory) -> np.ndarray:
        return np.asarray(self.supply.evaluate(traj.du, traj.y, traj.dy), dtype=float)

    def margins(self, traj: Trajectory) -> np.ndarray:
        return self.supply_series(traj) - self.vdot_series(traj)

    def describe(self) -> str:
        return (f"{self.series.model.name} composite {self.form}: "
                f"V = {self.scale:g}*({self.cert_up.storage.label}) + "
                f"{self.cert_down.storage.label}, gain {self.gain:g}")

    @property
    def input_gain(self):
        return self.supply.input_gain

    @property
    def output_cost(self):
        return self.supply.cost_on("y" if self.form == "nhp" else "dy")


def _power_params(gain):
    if gain.kind != "power":
        return None
    return gain.scale_factor * gain.params["coeff"], gain.params["exponent"]


def composite_certificate(series: SeriesSystem, cert_up_anhp: Certificate,
                          cert_down: Certificate) -> CompositeCertificate:
    """Telescope an upstream derivative-bounding certificate with a
    downstream certificate charging the same power of its input derivative.

    ``cert_down`` may be the downstream nhp certificate (composite bounds
    y2) or its anhp certificate (composite bounds ydot2).
    """
    if cert_up_anhp.form != "anhp":
        raise CertificateError("upstream certificate must be the anhp (derivative) one")
    alpha_up = _power_params(cert_up_anhp.supply.cost_on("dy"))
    beta_dn = _power_params(cert_down.supply.input_gain)
    if alpha_up is None or beta_dn is None or abs(alpha_up[1] - beta_dn[1]) > 1e-12:
        raise IncompatibleGainsError(
            "component gain functions use different exponents; no exact "
            "telescoping composite exists (use the empirical ratio mode)"
        )
    scale = beta_dn[0] / alpha_up[0]
    p = alpha_up[1]
    beta_up = _power_params(cert_up_anhp.supply.input_gain)
    if beta_up is not None:
        gain = (scale * beta_up[0]) ** (1.0 / p)
    else:
        gain = float("nan")
    channel = "y" if cert_down.form == "nhp" else "dy"
    supply = SupplyRate(
        cert_up_anhp.supply.input_gain.scaled(scale),
        ((cert_down.supply.cost_on(channel), channel),),
        label=f"{scale:g}*beta_up(|udot|) - alpha_down",
    )
    return CompositeCertificate(
        series=series,
        cert_up=cert_up_anhp,
        cert_down=cert_down,
        supply=supply,
        scale=scale,
        form=cert_down.form,
        gain=gain,
        info={"scale": scale, "exponent": p,
              "gain_up": cert_up_anhp.gain, "gain_down": cert_down.gain},
    )


# ---------------------------------------------------------------------------
# the composition theorem, checked on concrete instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompositionStage:
    name: str
    passed: bool
    detail: dict

    def to_json_dict(self) -> dict:
        return {"name": self.name, "pass": self.passed, "detail": self.detail}


@dataclass(frozen=True)
class CompositionProbeResult:
    probe_id: str
    stages: tuple
    passed: bool
    empirical_gain: float

    def to_json_dict(self) -> dict:
        return {
            "probe_id": self.probe_id,
            "pass": self.passed,
            "empirical_gain": self.empirical_gain,
            "stages": [s.to_json_dict() for s in self.stages],
        }


@dataclass(frozen=True)
class CompositionReport:
    """Per-probe, per-stage verdicts for the series composition claim.

    Note: a tentative higher-order composition rule fails in general
    because nonlinear operators need not commute with differentiation;
    only the first-order claim is exercised here.
    """

    system: str
    gain_product: float
    probes: tuple
    passed: bool
    exact_composite: bool

    def to_json_dict(self) -> dict:
        return {
            "system": self.system,
            "gain_product": self.gain_product,
            "pass": self.passed,
            "exact_composite": self.exact_composite,
            "probes": [p.to_json_dict() for p in self.probes],
        }


def _verdict_stage(name: str, rep: VerdictReport) -> CompositionStage:
    return CompositionStage(
        name=name,
        passed=rep.passed,
        detail={"min_margin": rep.min_margin, "slack": rep.slack,
                "argmin_time": rep.argmin_time},
    )


def _prefix_gain_stage(name, traj, out_series, cost, beta, v0, tol=None):
    lhs = _cumtrapz(np.asarray(cost(out_series), dtype=float), traj.t)
    rhs = _cumtrapz(np.asarray(beta(traj.du), dtype=float), traj.t) + v0
    slack = rhs - lhs
    if tol is None:
        tol = 1e-8 + 1e-9 * (1.0 + float(rhs[-1]))
    ok = bool(np.min(slack) >= -tol)
    denom = np.maximum(rhs - v0, 1e-300)
    ratio = float(np.max(np.maximum(lhs - v0, 0.0) / denom))
    return CompositionStage(
        name=name,
        passed=ok,
        detail={"min_slack": float(np.min(slack)), "v0": float(v0),
                "max_prefix_ratio": ratio},
    ), ratio


def composition_theorem_report(
    series: SeriesSystem,
    cert_up_nhp: Certificate,
    cert_up_anhp: Certificate,
    cert_down_nhp: Certificate,
    cert_down_anhp: Certificate,
    probes: Sequence[Probe],
    cfg: SolverConfig | None = None,
    thresholds: BarbalatThresholds | None = None,
) -> CompositionReport:
    """Exercise the composite high-pass claim on a probe battery.

    For every probe: (a) both upstream certificates pass; (b) both
    downstream certificates pass on the intermediate signal; (c) the
    composite bound on the final output holds prefix-wise with the product
    gain; (d) the same with the final output derivative.
    """
    cfg = cfg or SolverConfig()
    try:
        comp_nhp = composite_certificate(series, cert_up_anhp, cert_down_nhp)
        comp_anhp = composite_certificate(series, cert_up_anhp, cert_down_anhp)
        exact = True
    except IncompatibleGainsError:
        comp_nhp = comp_anhp = None
        exact = False

    results = []
    worst_ratio = 0.0
    for probe in probes:
        x0 = np.zeros(series.model.d_x) if probe.x0 is None else np.asarray(probe.x0)
        traj = simulate(series.model, probe.signal, x0, cfg)
        up_traj = series.upstream_trajectory(traj)
        dn_traj = series.downstream_trajectory(traj)

        stages = [
            _verdict_stage("up_nhp", evaluate_certificate(cert_up_nhp, up_traj,
                                                          probe_id=probe.id)),
            _verdict_stage("up_anhp", evaluate_certificate(cert_up_anhp, up_traj,
                                                           probe_id=probe.id)),
            _verdict_stage("down_nhp", evaluate_certificate(cert_down_nhp, dn_traj,
                                                            probe_id=probe.id)),
            _verdict_stage("down_anhp", evaluate_certificate(cert_down_anhp, dn_traj,
                                                             probe_id=probe.id)),
        ]

        if exact:
            rep_nhp = evaluate_certificate(comp_nhp, traj, probe_id=probe.id)
            rep_anhp = evaluate_certificate(comp_anhp, traj, probe_id=probe.id)
            stages.append(_verdict_stage("composite_nhp_pointwise", rep_nhp))
            stages.append(_verdict_stage("composite_anhp_pointwise", rep_anhp))
            v0 = float(comp_nhp.storage_series(traj)[0])
            stage_c, ratio = _prefix_gain_stage(
                "composite_nhp_prefix", traj, traj.y,
                comp_nhp.output_cost, comp_nhp.input_gain, v0)
            stages.append(stage_c)
            v0a = float(comp_anhp.storage_series(traj)[0])
            stage_d, _ = _prefix_gain_stage(
                "composite_anhp_prefix", traj, traj.dy,
                comp_anhp.output_cost, comp_anhp.input_gain, v0a)
            stages.append(stage_d)
            worst_ratio = max(worst_ratio, ratio)
        else:
            # empirical-ratio mode: measure the prefix ratio with the
            # downstream cost against the upstream input gain, assert nothing
            cost = cert_down_nhp.supply.cost_on("y")
            beta = cert_up_anhp.supply.input_gain
            stage_c, ratio = _prefix_gain_stage(
                "empirical_ratio", traj, traj.y, cost, beta, 0.0, tol=math.inf)
            stages.append(stage_c)
            worst_ratio = max(worst_ratio, ratio)

        results.append(CompositionProbeResult(
            probe_id=probe.id,
            stages=tuple(stages),
            passed=all(s.passed for s in stages),
            empirical_gain=worst_ratio,
        ))

    gain_product = comp_nhp.gain if exact else float("nan")
    return CompositionReport(
        system=series.model.name,
        gain_product=gain_product,
        probes=tuple(results),
        passed=all(r.passed for r in results),
        exact_composite=exact,
    )


def composite_barbalat(series: SeriesSystem, comp_nhp: CompositeCertificate,
                       comp_anhp: CompositeCertificate, traj: Trajectory,
                       thresholds: BarbalatThresholds | None = None):
    """Convergence verdict for the composite output via the composite
    certificates; duck-types the composite certificates into the scalar
    verdict machinery."""
    return barbalat_verdict(traj, comp_nhp, comp_anhp, thresholds)
