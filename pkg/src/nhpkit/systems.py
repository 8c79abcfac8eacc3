"""SISO state-space systems, a catalog of first-order high-pass examples,
and fixed-step / adaptive Runge-Kutta simulation.

Systems follow the input-affine-free form ``xdot = f(x, u, udot)``,
``y = g(x, u)``.  The filter examples ignore ``udot``; the PI closed loops
are driven by the *derivative* of their disturbance input, which is why the
dynamics callable receives it explicitly.  Output derivatives are computed
by the chain rule with hand-coded partials of ``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .signals import InputSignal, SignalError, Trace

__all__ = [
    "CatalogError",
    "SimulationDiverged",
    "StepUnderflow",
    "SystemModel",
    "SolverConfig",
    "Trajectory",
    "SectorSpec",
    "PiSpec",
    "linear_hp",
    "sinh_hp",
    "cubic_hp",
    "sector_hp",
    "pi_closed_loop",
    "linear_pi",
    "nonsmooth_pi",
    "make_system",
    "catalog_names",
    "simulate",
    "output_derivative",
]


class CatalogError(ValueError):
    """Raised when a catalog system cannot be constructed as requested."""


class SimulationDiverged(RuntimeError):
    def __init__(self, t_last: float, message: str):
        super().__init__(f"{message} (last valid time t = {t_last:.6g})")
        self.t_last = t_last


class StepUnderflow(RuntimeError):
    def __init__(self, t_last: float, h: float):
        super().__init__(
            f"step size underflow (h = {h:.3e}) at t = {t_last:.6g}; "
            "dynamics too stiff for the configured minimum step"
        )
        self.t_last = t_last


@dataclass(frozen=True)
class SystemModel:
    """State-space system with analytic output-derivative information.

    ``f``, ``g`` and the partials are vectorized: ``x`` may be shaped
    ``(d,)`` or ``(n, d)`` with matching scalar/array ``u`` and ``udot``.
    """

    name: str
    d_x: int
    params: dict
    f: Callable
    g: Callable
    dg_dx: Callable
    dg_du: Callable

    def output(self, x, u):
        return self.g(x, u)

    def output_derivative(self, x, u, udot):
        """ydot = dg/dx . f(x, u, udot) + dg/du * udot."""
        fx = np.asarray(self.f(x, u, udot), dtype=float)
        jac = np.asarray(self.dg_dx(x, u), dtype=float)
        return np.sum(jac * fx, axis=-1) + self.dg_du(x, u) * np.asarray(udot)


def output_derivative(sys: SystemModel, x, u, udot):
    """Chain-rule output derivative; module-level alias of the method."""
    return sys.output_derivative(x, u, udot)


# ---------------------------------------------------------------------------
# filter catalog
# ---------------------------------------------------------------------------


def _filter_model(name, lam, rate_fn, params):
    """Common structure for the one-state filters: xdot = lam*rate(y), y = u - x."""

    def f(x, u, udot):
        y = u - x[..., 0]
        return np.stack([lam * rate_fn(y)], axis=-1)

    def g(x, u):
        return u - x[..., 0]

    def dg_dx(x, u):
        return np.broadcast_to(np.array([-1.0]), np.shape(x))

    def dg_du(x, u):
        return np.ones(np.shape(x)[:-1])

    return SystemModel(name=name, d_x=1, params=params, f=f, g=g, dg_dx=dg_dx, dg_du=dg_du)


def linear_hp(lam: float) -> SystemModel:
    """RC high-pass filter: xdot = lam*y, y = u - x."""
    if lam <= 0:
        raise CatalogError("linear_hp rate lambda must be positive")
    return _filter_model("linear_hp", lam, lambda y: y, {"lam": float(lam)})


def sinh_hp(lam: float) -> SystemModel:
    """High-pass filter with an exponential-diode resistor: xdot = lam*sinh(y)."""
    if lam <= 0:
        raise CatalogError("sinh_hp rate lambda must be positive")
    return _filter_model("sinh_hp", lam, np.sinh, {"lam": float(lam)})


def cubic_hp(lam: float) -> SystemModel:
    """Slow-manifold high-pass filter: xdot = lam*y^3."""
    if lam <= 0:
        raise CatalogError("cubic_hp rate lambda must be positive")
    return _filter_model("cubic_hp", lam, lambda y: y**3, {"lam": float(lam)})


@dataclass(frozen=True)
class SectorSpec:
    """Static nonlinearity in the sector [alpha, beta] with 0 < alpha <= beta."""

    shape: str
    alpha: float
    beta: float
    knee: float = 1.0

    def __post_init__(self):
        if not (0 < self.alpha <= self.beta < math.inf):
            raise CatalogError("sector bounds must satisfy 0 < alpha <= beta < inf")
        if self.shape not in ("saturated_linear", "rational_blend", "tanh_blend"):
            raise CatalogError(f"unknown sector shape {self.shape!r}")
        if self.shape == "saturated_linear" and self.knee <= 0:
            raise CatalogError("saturated_linear knee must be positive")

    def phi(self, q):
        q = np.asarray(q, dtype=float)
        a, b = self.alpha, self.beta
        if self.shape == "saturated_linear":
            # slope beta up to the knee, slope alpha beyond
            mag = np.minimum(b * np.abs(q), b * self.knee + a * (np.abs(q) - self.knee))
            return np.sign(q) * mag
        if self.shape == "rational_blend":
            return a * q + (b - a) * q / (1.0 + np.abs(q))
        return a * q + (b - a) * np.tanh(q)


def sector_membership_ok(spec: SectorSpec, q_max: float = 10.0, n: int = 10_000,
                         tol: float = 1e-12):
    """Grid check of (phi(q) - alpha*q)(phi(q) - beta*q) <= 0."""
    q = np.linspace(-q_max, q_max, n)
    p = spec.phi(q)
    product = (p - spec.alpha * q) * (p - spec.beta * q)
    worst = float(np.max(product))
    return worst <= tol, worst


def sector_hp(lam: float, spec: SectorSpec) -> SystemModel:
    """High-pass filter with a sector-bounded resistor: xdot = lam*phi(y)."""
    if lam <= 0:
        raise CatalogError("sector_hp rate lambda must be positive")
    ok, worst = sector_membership_ok(spec)
    if not ok:
        raise CatalogError(
            f"phi violates the sector [{spec.alpha:g}, {spec.beta:g}] "
            f"(max product {worst:.3e} > 0 on the check grid)"
        )
    params = {
        "lam": float(lam),
        "alpha": spec.alpha,
        "beta": spec.beta,
        "sector": spec,
    }
    return _filter_model("sector_hp", lam, spec.phi, params)


# ---------------------------------------------------------------------------
# PI closed loops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PiSpec:
    """Proportional/integral feedback data for the scalar integrator loop.

    ``G`` is the proportional term with derivative ``g``; ``F`` is the
    integral-term potential with derivative ``f``.  Requirements (checked
    on a grid): G(0) = F(0) = 0, g(y) >= g0 > 0, and y*f(y) > 0 for y != 0.
    """

    label: str
    G: Callable
    g: Callable
    F: Callable
    f: Callable
    g0: float
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.g0 <= 0:
            raise CatalogError("PI loop needs g(y) >= g0 > 0")
        ygrid = np.linspace(-10.0, 10.0, 4001)
        if abs(float(self.G(0.0))) > 1e-12 or abs(float(self.F(0.0))) > 1e-12:
            raise CatalogError("PI loop needs G(0) = F(0) = 0")
        gvals = np.asarray(self.g(ygrid), dtype=float)
        if np.any(gvals < self.g0 - 1e-12):
            raise CatalogError("PI proportional slope drops below g0 on the check grid")
        nz = ygrid[np.abs(ygrid) > 1e-9]
        if np.any(nz * np.asarray(self.f(nz), dtype=float) <= 0):
            raise CatalogError("PI integral term violates y*f(y) > 0 on the check grid")


def pi_closed_loop(pi: PiSpec, name: str = "pi") -> SystemModel:
    """Closed loop ÿ + g(y)·ẏ + f(y) = (d/dt of the disturbance).

    The simulation input channel is the disturbance itself; only its
    derivative enters the dynamics.  State is (y, ydot).
    """

    G, g, f = pi.G, pi.g, pi.f

    def f_dyn(x, u, udot):
        y = x[..., 0]
        yd = x[..., 1]
        return np.stack([yd, np.asarray(udot) - g(y) * yd - f(y)], axis=-1)

    def g_out(x, u):
        return x[..., 0]

    def dg_dx(x, u):
        out = np.zeros(np.shape(x))
        out[..., 0] = 1.0
        return out

    def dg_du(x, u):
        return np.zeros(np.shape(x)[:-1])

    params = {"pi": pi, "g0": pi.g0, **pi.constants}
    return SystemModel(name=name, d_x=2, params=params, f=f_dyn, g=g_out,
                       dg_dx=dg_dx, dg_du=dg_du)


def linear_pi(kp: float, ki: float) -> SystemModel:
    """Linear PI feedback: G(y) = kp*y, F(y) = ki*y^2/2."""
    if kp <= 0 or ki <= 0:
        raise CatalogError("linear PI gains must be positive")
    spec = PiSpec(
        label=f"linear_pi(kp={kp:g}, ki={ki:g})",
        G=lambda y: kp * np.asarray(y, dtype=float),
        g=lambda y: kp * np.ones_like(np.asarray(y, dtype=float)),
        F=lambda y: 0.5 * ki * np.asarray(y, dtype=float) ** 2,
        f=lambda y: ki * np.asarray(y, dtype=float),
        g0=kp,
        constants={"kp": float(kp), "ki": float(ki), "ks": 0.0, "delta": 0.0},
    )
    return pi_closed_loop(spec, name="pi")


def _logcosh(z):
    # numerically stable log(cosh(z))
    z = np.abs(np.asarray(z, dtype=float))
    return z + np.log1p(np.exp(-2.0 * z)) - math.log(2.0)


def smoothed_sign(y, delta: float):
    """tanh(y/delta) for delta > 0, exact sign for delta = 0."""
    y = np.asarray(y, dtype=float)
    if delta > 0:
        return np.tanh(y / delta)
    return np.sign(y)


def nonsmooth_pi(kp: float, ki: float, ks: float, delta: float = 1e-3) -> SystemModel:
    """PI loop with a discontinuous integral term f(y) = ki*y + ks*sgn(y).

    ``delta > 0`` replaces sgn(y) by tanh(y/delta), keeping the right-hand
    side smooth for the Runge-Kutta solvers; ``delta = 0`` uses the exact
    sign and relies on the adaptive controller near the switching surface.
    """
    if kp <= 0 or ki <= 0 or ks <= 0:
        raise CatalogError("nonsmooth PI gains must be positive")
    if delta < 0:
        raise CatalogError("smoothing width delta must be nonnegative")

    def f_int(y):
        y = np.asarray(y, dtype=float)
        return ki * y + ks * smoothed_sign(y, delta)

    def F_int(y):
        y = np.asarray(y, dtype=float)
        if delta > 0:
            return 0.5 * ki * y**2 + ks * delta * _logcosh(y / delta)
        return 0.5 * ki * y**2 + ks * np.abs(y)

    spec = PiSpec(
        label=f"nonsmooth_pi(kp={kp:g}, ki={ki:g}, ks={ks:g}, delta={delta:g})",
        G=lambda y: kp * np.asarray(y, dtype=float),
        g=lambda y: kp * np.ones_like(np.asarray(y, dtype=float)),
        F=F_int,
        f=f_int,
        g0=kp,
        constants={"kp": float(kp), "ki": float(ki), "ks": float(ks),
                   "delta": float(delta)},
    )
    return pi_closed_loop(spec, name="nonsmooth_pi")


_CATALOG_BUILDERS = {
    "linear_hp": lambda p: linear_hp(p.get("lambda", p.get("lam", 1.0))),
    "sinh_hp": lambda p: sinh_hp(p.get("lambda", p.get("lam", 1.0))),
    "cubic_hp": lambda p: cubic_hp(p.get("lambda", p.get("lam", 1.0))),
    "sector_hp": lambda p: sector_hp(
        p.get("lambda", p.get("lam", 1.0)),
        SectorSpec(
            shape=p.get("phi", "rational_blend"),
            alpha=p.get("alpha", 1.0),
            beta=p.get("beta", 2.0),
            knee=p.get("knee", 1.0),
        ),
    ),
    "pi": lambda p: linear_pi(p.get("kp", 2.0), p.get("ki", 1.0)),
    "nonsmooth_pi": lambda p: nonsmooth_pi(
        p.get("kp", 1.0), p.get("ki", 1.0), p.get("ks", 1.0), p.get("delta", 1e-3)
    ),
}


def catalog_names() -> tuple:
    return tuple(sorted(_CATALOG_BUILDERS))


def make_system(name: str, params: dict | None = None) -> SystemModel:
    """Build a catalog system from its configuration name and parameters."""
    if name not in _CATALOG_BUILDERS:
        raise CatalogError(f"unknown system {name!r}; known: {', '.join(catalog_names())}")
    return _CATALOG_BUILDERS[name](dict(params or {}))


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    """Integrator settings.

    ``method`` is "rk45" (adaptive Dormand-Prince 5(4)) or "rk4" (fixed
    step).  Samples are produced on the uniform grid with spacing
    ``sample_dt``; adaptive steps never cross a sample point.
    """

    method: str = "rk45"
    rtol: float = 1e-8
    atol: float = 1e-10
    horizon: float = 20.0
    sample_dt: float = 0.01
    fixed_step: float = 1e-3
    min_step: float = 1e-12
    max_step: float = math.inf
    y_cap: float = 50.0

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise CatalogError(f"unknown solver method {self.method!r}")
        if self.rtol <= 0 or self.atol <= 0:
            raise CatalogError("solver tolerances must be positive")
        if self.horizon <= 0 or self.sample_dt <= 0 or self.fixed_step <= 0:
            raise CatalogError("horizon, sample_dt and fixed_step must be positive")
        if not 0 < self.min_step <= self.max_step:
            raise CatalogError("need 0 < min_step <= max_step")

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class Trajectory:
    """Simulated solution sampled on a shared grid.

    ``y`` is always recomputed from the state and input, never stored
    independently, so y(t_i) = g(x(t_i), u(t_i)) holds exactly.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    du: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    meta: dict

    def trace(self, channel: str) -> Trace:
        if channel in ("y", "dy", "u", "du"):
            return Trace(self.t, getattr(self, channel))
        if channel.startswith("x"):
            return Trace(self.t, self.x[:, int(channel[1:])])
        raise SignalError(f"unknown trajectory channel {channel!r}")

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def to_csv(self, path) -> None:
        from . import reporting

        d = self.x.shape[1]
        header = ["t"] + [f"x{i}" for i in range(d)] + ["u", "du", "y", "dy"]
        rows = np.column_stack([self.t, self.x, self.u, self.du, self.y, self.dy])
        reporting.write_csv(path, header, rows)


def trajectory_from_arrays(sys: SystemModel, t, x, u, du, meta=None) -> Trajectory:
    """Assemble a trajectory, recomputing y and dy from the model."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    du = np.asarray(du, dtype=float)
    y = np.asarray(sys.g(x, u), dtype=float)
    dy = np.asarray(sys.output_derivative(x, u, du), dtype=float)
    return Trajectory(t=t, x=x, u=u, du=du, y=y, dy=dy, meta=dict(meta or {}))


# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_ERR = (
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


def simulate(sys: SystemModel, sig, x0, cfg: SolverConfig) -> Trajectory:
    """Integrate the system driven by ``sig`` from ``x0`` over ``cfg.horizon``.

    Raises :class:`SimulationDiverged` when the output leaves ``[-y_cap,
    y_cap]`` or the state becomes non-finite, and :class:`StepUnderflow`
    when adaptive control would need steps below ``min_step``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (sys.d_x,):
        raise CatalogError(
            f"initial state has shape {x0.shape}, expected ({sys.d_x},) for {sys.name}"
        )

    n_out = int(round(cfg.horizon / cfg.sample_dt))
    n_out = max(n_out, 2)
    tgrid = np.linspace(0.0, cfg.horizon, n_out + 1)

    def rhs(t, x):
        u, du = sig.eval(t)
        return np.asarray(sys.f(x, float(u), float(du)), dtype=float)

    def guard(t, x):
        if not np.all(np.isfinite(x)):
            raise SimulationDiverged(t, "state became non-finite")
        u = float(sig.value(t))
        y = float(sys.g(x, u))
        if abs(y) > cfg.y_cap:
            raise SimulationDiverged(t, f"output |y| = {abs(y):.3g} exceeded cap {cfg.y_cap:g}")

    if cfg.method == "rk4":
        xs, meta = _run_rk4(rhs, guard, x0, tgrid, cfg)
    else:
        xs, meta = _run_rk45(rhs, guard, x0, tgrid, cfg)

    u_, du_ = sig.sample(tgrid)
    meta = {"method": cfg.method, "rtol": cfg.rtol, "atol": cfg.atol, **meta}
    return trajectory_from_arrays(sys, tgrid, xs, u_, du_, meta)


def _run_rk4(rhs, guard, x0, tgrid, cfg):
    sample_dt = tgrid[1] - tgrid[0]
    nsub = max(1, int(math.ceil(sample_dt / cfg.fixed_step - 1e-12)))
    h = sample_dt / nsub
    xs = np.empty((len(tgrid), len(x0)))
    xs[0] = x0
    x = x0
    guard(tgrid[0], x)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(len(tgrid) - 1):
            t = tgrid[k]
            for _ in range(nsub):
                k1 = rhs(t, x)
                k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
                k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
                k4 = rhs(t + h, x + h * k3)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                t += h
            guard(tgrid[k + 1], x)
            xs[k + 1] = x
    meta = {"naccepted": (len(tgrid) - 1) * nsub, "nrejected": 0,
            "max_error_estimate": 0.0, "step": h}
    return xs, meta


def _run_rk45(rhs, guard, x0, tgrid, cfg):
    xs = np.empty((len(tgrid), len(x0)))
    xs[0] = x0
    x = x0
    t = tgrid[0]
    guard(t, x)
    h_prop = min(tgrid[1] - tgrid[0], cfg.max_step)
    naccepted = 0
    nrejected = 0
    max_err = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, len(tgrid)):
            t_target = tgrid[k]
            while t < t_target - 1e-13 * max(1.0, abs(t_target)):
                h = min(h_prop, cfg.max_step, t_target - t)
                ks = [rhs(t, x)]
                for i in range(1, 7):
                    xi = x + h * sum(a * kj for a, kj in zip(_DP_A[i], ks))
                    ks.append(rhs(t + _DP_C[i] * h, xi))
                x_new = x + h * sum(b * kj for b, kj in zip(_DP_B5, ks))
                err_vec = h * sum(e * kj for e, kj in zip(_DP_ERR, ks))
                scale = cfg.atol + cfg.rtol * np.maximum(np.abs(x), np.abs(x_new))
                with np.errstate(all="ignore"):
                    err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
                if math.isfinite(err) and err <= 1.0:
                    t = t + h
                    x = x_new
                    naccepted += 1
                    max_err = max(max_err, err)
                    guard(t, x)
                    factor = 0.9 * (err + 1e-16) ** -0.2
                    grown = h * min(5.0, max(0.2, factor))
                    # when the step was clipped to the grid, keep the proposal
                    h_prop = max(h_prop, grown) if h < h_prop else grown
                else:
                    nrejected += 1
                    if math.isfinite(err):
                        h_prop = h * max(0.2, 0.9 * err**-0.2)
                    else:
                        # non-finite stage values: treat as blow-up unless a
                        # much smaller step recovers
                        h_prop = 0.25 * h
                        if h_prop < cfg.min_step:
                            raise SimulationDiverged(
                                t, "state or derivative became non-finite")
                    if h_prop < cfg.min_step:
                        raise StepUnderflow(t, h_prop)
            xs[k] = x
    meta = {"naccepted": naccepted, "nrejected": nrejected,
            "max_error_estimate": max_err}
    return xs, meta
