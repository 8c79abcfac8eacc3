"""Analytically differentiable test inputs, sampled traces, and gain functions.

Every input signal carries an exact derivative so that dissipation checks
never rely on numerically differentiated inputs.  Traces are immutable
sampled signals on a strictly increasing time grid; the norm and integral
helpers below all use the composite trapezoid rule on that grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "SignalError",
    "InputSignal",
    "SampledSignal",
    "Trace",
    "GainFunction",
    "make_signal",
    "eval_signal",
    "lp_seminorm",
    "integrate_gain",
    "numeric_derivative",
    "tail_sup",
    "gain_conditions_ok",
]


class SignalError(ValueError):
    """Raised for invalid signal or gain-function parameters."""


# ---------------------------------------------------------------------------
# input signals
# ---------------------------------------------------------------------------

_SIGNAL_KINDS = (
    "constant",
    "sinusoid",
    "sum_of_sinusoids",
    "step",
    "ramp_hold",
    "piecewise_polynomial",
)


def _smoothstep(s):
    """C1 cubic ramp 3s^2 - 2s^3 on [0, 1], clamped outside."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _smoothstep_deriv(s):
    inside = (s > 0.0) & (s < 1.0)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, 6.0 * s * (1.0 - s), 0.0)


@dataclass(frozen=True)
class InputSignal:
    """Scalar input u(t) with an exact analytic derivative.

    Instances are built through :func:`make_signal`, which validates the
    parameters for each kind.  ``value`` and ``derivative`` accept scalars
    or arrays of times t >= 0.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def value(self, t):
        return _VALUE[self.kind](self.params, np.asarray(t, dtype=float))

    def derivative(self, t):
        return _DERIV[self.kind](self.params, np.asarray(t, dtype=float))

    def eval(self, t):
        """Return ``(u(t), du/dt(t))``."""
        return self.value(t), self.derivative(t)

    def sample(self, tgrid):
        """Sample value and derivative on a time grid, as float arrays."""
        tgrid = np.asarray(tgrid, dtype=float)
        u = np.broadcast_to(self.value(tgrid), tgrid.shape).astype(float)
        du = np.broadcast_to(self.derivative(tgrid), tgrid.shape).astype(float)
        return u, du


def _constant_value(p, t):
    return np.full_like(t, p["value"], dtype=float)


def _constant_deriv(p, t):
    return np.zeros_like(t, dtype=float)


def _sinusoid_value(p, t):
    return p["amplitude"] * np.sin(p["omega"] * t + p["phase"])


def _sinusoid_deriv(p, t):
    return p["amplitude"] * p["omega"] * np.cos(p["omega"] * t + p["phase"])


def _sum_value(p, t):
    out = np.zeros_like(t, dtype=float)
    for a, w, ph in zip(p["amplitudes"], p["omegas"], p["phases"]):
        out = out + a * np.sin(w * t + ph)
    return out


def _sum_deriv(p, t):
    out = np.zeros_like(t, dtype=float)
    for a, w, ph in zip(p["amplitudes"], p["omegas"], p["phases"]):
        out = out + a * w * np.cos(w * t + ph)
    return out


def _step_value(p, t):
    # C1 smoothed step: rises over [t0, t0 + width], exactly constant after.
    s = (t - p["t0"]) / p["width"]
    return p["amplitude"] * _smoothstep(s)


def _step_deriv(p, t):
    s = (t - p["t0"]) / p["width"]
    return p["amplitude"] * _smoothstep_deriv(s) / p["width"]


def _ramp_value(p, t):
    return p["slope"] * np.minimum(t, p["t_hold"])


def _ramp_deriv(p, t):
    # derivative taken right-continuous at the hold time
    return np.where(t < p["t_hold"], p["slope"], 0.0)


def _pw_segment(p, t):
    breaks = np.asarray(p["breaks"], dtype=float)
    idx = np.searchsorted(breaks, t, side="right") - 1
    return np.clip(idx, 0, len(breaks) - 1), breaks


def _pw_value(p, t):
    idx, breaks = _pw_segment(p, t)
    out = np.zeros_like(t, dtype=float)
    for i, coeffs in enumerate(p["coeffs"]):
        mask = idx == i
        if np.any(mask):
            local = t[mask] - breaks[i] if t.ndim else t - breaks[i]
            out_val = np.polynomial.polynomial.polyval(local, coeffs)
            if t.ndim:
                out[mask] = out_val
            else:
                out = np.asarray(out_val, dtype=float)
    return out


def _pw_deriv(p, t):
    idx, breaks = _pw_segment(p, t)
    out = np.zeros_like(t, dtype=float)
    for i, coeffs in enumerate(p["coeffs"]):
        dcoeffs = np.polynomial.polynomial.polyder(np.asarray(coeffs, dtype=float))
        mask = idx == i
        if np.any(mask):
            local = t[mask] - breaks[i] if t.ndim else t - breaks[i]
            out_val = np.polynomial.polynomial.polyval(local, dcoeffs)
            if t.ndim:
                out[mask] = out_val
            else:
                out = np.asarray(out_val, dtype=float)
    return out


_VALUE = {
    "constant": _constant_value,
    "sinusoid": _sinusoid_value,
    "sum_of_sinusoids": _sum_value,
    "step": _step_value,
    "ramp_hold": _ramp_value,
    "piecewise_polynomial": _pw_value,
}

_DERIV = {
    "constant": _constant_deriv,
    "sinusoid": _sinusoid_deriv,
    "sum_of_sinusoids": _sum_deriv,
    "step": _step_deriv,
    "ramp_hold": _ramp_deriv,
    "piecewise_polynomial": _pw_deriv,
}


def make_signal(kind: str, **params) -> InputSignal:
    """Construct and validate an input signal.

    Supported kinds and parameters:

    - ``constant``: value
    - ``sinusoid``: amplitude, omega (> 0), phase (default 0)
    - ``sum_of_sinusoids``: amplitudes, omegas (> 0 each), phases (optional)
    - ``step``: amplitude, width (> 0), t0 (default 0); C1 smoothed rise
    - ``ramp_hold``: slope, t_hold (> 0); constant for t >= t_hold
    - ``piecewise_polynomial``: breaks (ascending, starting at 0), coeffs
      (one coefficient tuple per segment, local power basis)
    """
    if kind not in _SIGNAL_KINDS:
        raise SignalError(f"unknown signal kind {kind!r}")
    p = dict(params)

    if kind == "constant":
        p.setdefault("value", 0.0)
    elif kind == "sinusoid":
        p.setdefault("phase", 0.0)
        _require(p, "amplitude", "omega")
        if p["omega"] <= 0:
            raise SignalError("sinusoid omega must be positive")
    elif kind == "sum_of_sinusoids":
        _require(p, "amplitudes", "omegas")
        amps = tuple(float(a) for a in p["amplitudes"])
        omegas = tuple(float(w) for w in p["omegas"])
        phases = tuple(float(x) for x in p.get("phases", (0.0,) * len(amps)))
        if not amps:
            raise SignalError("sum_of_sinusoids needs at least one component")
        if len(amps) != len(omegas) or len(amps) != len(phases):
            raise SignalError("sum_of_sinusoids parameter lengths differ")
        if any(w <= 0 for w in omegas):
            raise SignalError("sum_of_sinusoids omegas must be positive")
        p = {"amplitudes": amps, "omegas": omegas, "phases": phases}
    elif kind == "step":
        p.setdefault("t0", 0.0)
        _require(p, "amplitude", "width")
        if p["width"] <= 0:
            raise SignalError("step smoothing width must be positive")
        if p["t0"] < 0:
            raise SignalError("step t0 must be nonnegative")
    elif kind == "ramp_hold":
        _require(p, "slope", "t_hold")
        if p["t_hold"] <= 0:
            raise SignalError("ramp_hold t_hold must be positive")
    elif kind == "piecewise_polynomial":
        _require(p, "breaks", "coeffs")
        breaks = tuple(float(b) for b in p["breaks"])
        coeffs = tuple(tuple(float(c) for c in seg) for seg in p["coeffs"])
        if not coeffs or not breaks:
            raise SignalError("piecewise_polynomial needs at least one segment")
        if len(breaks) != len(coeffs):
            raise SignalError("piecewise_polynomial breaks and coeffs lengths differ")
        if breaks[0] != 0.0:
            raise SignalError("piecewise_polynomial must start at t = 0")
        if any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
            raise SignalError("piecewise_polynomial breaks must be ascending")
        if any(len(seg) == 0 for seg in coeffs):
            raise SignalError("piecewise_polynomial has an empty segment")
        p = {"breaks": breaks, "coeffs": coeffs}

    return InputSignal(kind=kind, params=p)


def _require(p, *names):
    missing = [n for n in names if n not in p]
    if missing:
        raise SignalError(f"missing parameter(s): {', '.join(missing)}")


def eval_signal(sig: InputSignal, t):
    """Exact value and derivative of a signal at time t >= 0."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise SignalError("signals are defined for t >= 0")
    return sig.eval(t)


class SampledSignal:
    """C1 signal interpolating samples (t_i, v_i, dv_i) by cubic Hermite pieces.

    Used to feed one system's simulated output into another system while
    keeping an analytic derivative.  Beyond the sample range it extends
    with the boundary value and zero slope.
    """

    kind = "sampled_hermite"

    def __init__(self, t, v, dv):
        t = np.asarray(t, dtype=float)
        v = np.asarray(v, dtype=float)
        dv = np.asarray(dv, dtype=float)
        if t.ndim != 1 or len(t) < 2 or len(v) != len(t) or len(dv) != len(t):
            raise SignalError("SampledSignal needs matching t, v, dv with >= 2 samples")
        if np.any(np.diff(t) <= 0):
            raise SignalError("SampledSignal time grid must be strictly increasing")
        self._t = t
        self._v = v
        self._dv = dv

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self._t, t, side="right") - 1, 0, len(self._t) - 2)
        h = self._t[idx + 1] - self._t[idx]
        s = np.clip((t - self._t[idx]) / h, 0.0, 1.0)
        return idx, h, s

    def value(self, t):
        idx, h, s = self._locate(t)
        v0, v1 = self._v[idx], self._v[idx + 1]
        m0, m1 = self._dv[idx] * h, self._dv[idx + 1] * h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * v0 + h10 * m0 + h01 * v1 + h11 * m1

    def derivative(self, t):
        idx, h, s = self._locate(t)
        v0, v1 = self._v[idx], self._v[idx + 1]
        m0, m1 = self._dv[idx] * h, self._dv[idx + 1] * h
        dh00 = 6 * s * (s - 1)
        dh10 = (1 - s) * (1 - 3 * s)
        dh01 = 6 * s * (1 - s)
        dh11 = s * (3 * s - 2)
        return (dh00 * v0 + dh10 * m0 + dh01 * v1 + dh11 * m1) / h

    def eval(self, t):
        return self.value(t), self.derivative(t)

    def sample(self, tgrid):
        tgrid = np.asarray(tgrid, dtype=float)
        return self.value(tgrid), self.derivative(tgrid)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trace:
    """Sampled scalar signal on a strictly increasing time grid."""

    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if t.ndim != 1 or v.ndim != 1 or len(t) != len(v):
            raise SignalError("trace needs matching 1-d t and v arrays")
        if len(t) < 2:
            raise SignalError("trace needs at least two samples")
        if np.any(np.diff(t) <= 0):
            raise SignalError("trace time grid must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def window(self, t_lo: float, t_hi: float) -> "Trace":
        """Restrict to samples with t_lo <= t <= t_hi (grid points only)."""
        if t_lo < self.t[0] - 1e-12 or t_hi > self.t[-1] + 1e-12:
            raise SignalError("window outside trace support")
        if t_hi <= t_lo:
            raise SignalError("window must have positive length")
        mask = (self.t >= t_lo - 1e-12) & (self.t <= t_hi + 1e-12)
        if mask.sum() < 2:
            raise SignalError("window contains fewer than two samples")
        return Trace(self.t[mask], self.v[mask])

    def to_csv(self, path) -> None:
        from . import reporting

        reporting.write_csv(path, ("t", "v"), np.column_stack([self.t, self.v]))

    @staticmethod
    def from_csv(path) -> "Trace":
        data = np.genfromtxt(path, delimiter=",", names=True)
        return Trace(np.atleast_1d(data["t"]), np.atleast_1d(data["v"]))


def _resolve_window(tr: Trace, window):
    if window is None:
        return tr
    t_lo, t_hi = window
    return tr.window(float(t_lo), float(t_hi))


def lp_seminorm(tr: Trace, p: float, window=None) -> float:
    """Signal p-norm (integral_0^T |v|^p dt)^(1/p) by the trapezoid rule.

    The 1/p root is applied; for the raw integral of a transformed trace
    use :func:`integrate_gain`.
    """
    if p < 1:
        raise SignalError("norm exponent p must be >= 1")
    tr = _resolve_window(tr, window)
    raw = float(np.trapezoid(np.abs(tr.v) ** p, tr.t))
    return raw ** (1.0 / p)


def integrate_gain(tr: Trace, g: "GainFunction", window=None) -> float:
    """Trapezoid-rule integral of g(|v(t)|) over the window."""
    tr = _resolve_window(tr, window)
    return float(np.trapezoid(g(tr.v), tr.t))


def numeric_derivative(tr: Trace) -> Trace:
    """Finite-difference derivative: central interior, one-sided ends."""
    if len(tr.t) < 3:
        raise SignalError("numeric_derivative needs at least three samples")
    return Trace(tr.t, np.gradient(tr.v, tr.t, edge_order=2))


def tail_sup(tr: Trace, window_fraction: float) -> float:
    """Supremum of |v| over the trailing fraction of the trace duration."""
    if not 0.0 < window_fraction < 1.0:
        raise SignalError("window_fraction must lie in (0, 1)")
    t_start = tr.t[-1] - window_fraction * tr.duration
    mask = tr.t >= t_start - 1e-12
    return float(np.max(np.abs(tr.v[mask])))


# ---------------------------------------------------------------------------
# gain functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GainFunction:
    """Scalar gain function g(|s|): continuous, zero at zero, nondecreasing.

    Kinds:

    - ``power``: ``coeff * |s|**exponent``
    - ``x_sinh``: ``coeff * s * sinh(s)``
    - ``x_arsinh``: ``coeff * s * arsinh(s / scale)``
    - ``custom``: arbitrary even evaluator supplied as ``fn`` (used for
      composite supply-rate terms that have no closed-form tag)

    ``scale_factor`` multiplies the output; it is how certificates rescale
    component gains when composing supply rates.
    """

    kind: str
    params: dict = field(default_factory=dict)
    fn: Callable | None = None
    scale_factor: float = 1.0

    def __call__(self, s):
        s = np.abs(np.asarray(s, dtype=float))
        if self.kind == "power":
            out = self.params["coeff"] * s ** self.params["exponent"]
        elif self.kind == "x_sinh":
            out = self.params["coeff"] * s * np.sinh(s)
        elif self.kind == "x_arsinh":
            out = self.params["coeff"] * s * np.arcsinh(s / self.params["scale"])
        elif self.kind == "custom":
            out = self.fn(s)
        else:
            raise SignalError(f"unknown gain-function kind {self.kind!r}")
        return self.scale_factor * out

    def scaled(self, c: float) -> "GainFunction":
        if c <= 0:
            raise SignalError("gain-function scale must be positive")
        return GainFunction(self.kind, self.params, self.fn, self.scale_factor * c)

    def describe(self) -> str:
        if self.kind == "power":
            base = f"{self.params['coeff']:g}*|s|^{self.params['exponent']:g}"
        elif self.kind == "x_sinh":
            base = f"{self.params['coeff']:g}*s*sinh(s)"
        elif self.kind == "x_arsinh":
            base = f"{self.params['coeff']:g}*s*arsinh(s/{self.params['scale']:g})"
        else:
            base = self.params.get("label", "custom")
        if self.scale_factor != 1.0:
            return f"{self.scale_factor:g}*({base})"
        return base


def power_gain(coeff: float, exponent: float) -> GainFunction:
    if coeff < 0:
        raise SignalError("power gain coefficient must be nonnegative")
    if exponent < 1:
        raise SignalError("power gain exponent must be >= 1")
    return GainFunction("power", {"coeff": float(coeff), "exponent": float(exponent)})


def x_sinh_gain(coeff: float = 1.0) -> GainFunction:
    if coeff <= 0:
        raise SignalError("x_sinh gain coefficient must be positive")
    return GainFunction("x_sinh", {"coeff": float(coeff)})


def x_arsinh_gain(coeff: float, scale: float) -> GainFunction:
    if coeff <= 0 or scale <= 0:
        raise SignalError("x_arsinh gain needs positive coefficient and scale")
    return GainFunction("x_arsinh", {"coeff": float(coeff), "scale": float(scale)})


def custom_gain(fn: Callable, label: str) -> GainFunction:
    return GainFunction("custom", {"label": label}, fn=fn)


def gain_conditions_ok(g: GainFunction, s_max: float = 10.0, n: int = 2001) -> bool:
    """Sampled check of: continuous (finite), zero only at zero, nondecreasing.

    Uses a log-spaced grid on (0, s_max] plus the origin.
    """
    grid = np.concatenate([[0.0], np.geomspace(1e-9, s_max, n)])
    vals = np.asarray(g(grid), dtype=float)
    if not np.all(np.isfinite(vals)):
        return False
    if abs(vals[0]) > 1e-300:
        return False
    if np.any(vals[1:] <= 0):
        # zero (or negative) away from the origin
        if np.any(vals[1:] < 0):
            return False
        # allow underflow-to-zero only immediately next to the origin
        nz = np.nonzero(vals[1:] > 0)[0]
        if len(nz) == 0 or nz[0] > 3:
            return False
        if np.any(vals[1 + nz[0]:] <= 0):
            return False
    return bool(np.all(np.diff(vals) >= -1e-12 * np.maximum(1.0, vals[:-1])))
