"""Batch front end: scenario configs in, CSV traces and JSON verdicts out.

Scenario files use TOML.  A scenario names a catalog system, an input
signal, solver settings, and the list of checks to run; ``nhpkit corpus``
runs every bundled scenario.  Exit codes: 0 all checks passed, 1 at least
one FAIL, 2 INCONCLUSIVE outcomes only, 3 configuration errors, 4 runtime
errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import reporting
from .certificates import (
    BarbalatThresholds,
    CertificateError,
    MonotonicityError,
    NoPassingGainError,
    Probe,
    barbalat_verdict,
    certificate_catalog,
    certificate_family,
    evaluate_certificate,
    fenchel_check,
    fit_gain,
    psi_eval,
    psi_numeric_sup,
    robust_gain_inequality_check,
    sector_estimates_check,
    wfgs_check,
)
from .composition import compose_series, composition_theorem_report
from .signals import SignalError, make_signal
from .systems import (
    CatalogError,
    SimulationDiverged,
    SolverConfig,
    StepUnderflow,
    catalog_names,
    make_system,
    simulate,
)

__all__ = ["ScenarioConfig", "parse_config", "run_scenario", "list_catalog", "main"]

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INCONCLUSIVE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4

_CHECKS = ("pointwise", "integral", "wfgs", "barbalat", "fenchel", "sector",
           "psi", "robust-gain", "compose", "fit-gain")

_SYSTEM_KEYS = {
    "linear_hp": {"name", "lambda"},
    "sinh_hp": {"name", "lambda"},
    "cubic_hp": {"name", "lambda"},
    "sector_hp": {"name", "lambda", "alpha", "beta", "phi", "knee"},
    "pi": {"name", "kp", "ki"},
    "nonsmooth_pi": {"name", "kp", "ki", "ks", "delta"},
}

_INPUT_KEYS = {
    "constant": {"kind", "value"},
    "sinusoid": {"kind", "amplitude", "omega", "phase"},
    "sum_of_sinusoids": {"kind", "amplitudes", "omegas", "phases"},
    "step": {"kind", "amplitude", "width", "t0"},
    "ramp_hold": {"kind", "slope", "t_hold"},
    "piecewise_polynomial": {"kind", "breaks", "coeffs"},
}

_SIM_KEYS = {"x0", "method", "rtol", "atol", "horizon", "sample_dt",
             "fixed_step", "min_step", "max_step", "y_cap"}
_CHECK_KEYS = {"run", "forms", "gain", "gain_scale"}
_TOL_KEYS = {"pointwise", "integral", "tail", "tail_fraction"}
_TOP_KEYS = {"title", "system", "input", "simulation", "checks", "compose",
             "tolerances"}


@dataclass(frozen=True)
class ScenarioConfig:
    title: str
    system_name: str
    system_params: dict
    input_kind: str
    input_params: dict
    x0: tuple
    solver: SolverConfig
    checks: tuple
    forms: tuple
    gain: float | None
    gain_scale: float
    compose_name: str | None
    compose_params: dict
    tolerances: dict = field(default_factory=dict)


def parse_config(text: str):
    """Parse and validate a scenario; returns (config or None, error list).

    Validation is not fail-fast: every detectable problem is reported.
    """
    errors: list[str] = []
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        return None, [f"syntax error: {exc}"]

    for key in data:
        if key not in _TOP_KEYS:
            errors.append(f"unknown top-level key {key!r}")

    title = str(data.get("title", ""))

    # [system]
    system_name, system_params = None, {}
    sys_tab = data.get("system")
    if not isinstance(sys_tab, dict) or "name" not in sys_tab:
        errors.append("[system]: missing required key 'name'")
    else:
        system_name = str(sys_tab["name"])
        if system_name not in _SYSTEM_KEYS:
            errors.append(
                f"[system].name: unknown system {system_name!r}; "
                f"known: {', '.join(catalog_names())}")
            system_name = None
        else:
            for key in sys_tab:
                if key not in _SYSTEM_KEYS[system_name]:
                    errors.append(f"[system].{key}: unknown key for {system_name}")
            system_params = {k: v for k, v in sys_tab.items() if k != "name"}
            try:
                make_system(system_name, system_params)
            except (CatalogError, SignalError, TypeError) as exc:
                errors.append(f"[system]: {exc}")

    # [input]
    input_kind, input_params = None, {}
    in_tab = data.get("input")
    if not isinstance(in_tab, dict) or "kind" not in in_tab:
        errors.append("[input]: missing required key 'kind'")
    else:
        input_kind = str(in_tab["kind"])
        if input_kind not in _INPUT_KEYS:
            errors.append(f"[input].kind: unknown signal kind {input_kind!r}")
            input_kind = None
        else:
            for key in in_tab:
                if key not in _INPUT_KEYS[input_kind]:
                    errors.append(f"[input].{key}: unknown key for {input_kind}")
            input_params = {k: v for k, v in in_tab.items() if k != "kind"}
            try:
                make_signal(input_kind, **input_params)
            except (SignalError, TypeError) as exc:
                errors.append(f"[input]: {exc}")

    # [simulation]
    sim_tab = data.get("simulation", {})
    x0 = tuple(float(v) for v in sim_tab.get("x0", ())) if isinstance(sim_tab, dict) else ()
    solver = None
    if not isinstance(sim_tab, dict):
        errors.append("[simulation]: must be a table")
    else:
        for key in sim_tab:
            if key not in _SIM_KEYS:
                errors.append(f"[simulation].{key}: unknown key")
        kw = {k: v for k, v in sim_tab.items() if k != "x0" and k in _SIM_KEYS}
        try:
            solver = SolverConfig(**kw)
        except (CatalogError, TypeError) as exc:
            errors.append(f"[simulation]: {exc}")

    # [checks]
    chk_tab = data.get("checks", {})
    checks, forms, gain, gain_scale = ("pointwise", "integral"), ("nhp",), None, 1.0
    if not isinstance(chk_tab, dict):
        errors.append("[checks]: must be a table")
    else:
        for key in chk_tab:
            if key not in _CHECK_KEYS:
                errors.append(f"[checks].{key}: unknown key")
        checks = tuple(str(c) for c in chk_tab.get("run", checks))
        for c in checks:
            if c not in _CHECKS:
                errors.append(f"[checks].run: unknown check {c!r}; known: {', '.join(_CHECKS)}")
        forms = tuple(str(f) for f in chk_tab.get("forms", forms))
        for f in forms:
            if f not in ("nhp", "anhp"):
                errors.append(f"[checks].forms: unknown form {f!r}")
        gain = chk_tab.get("gain")
        if gain is not None and (not isinstance(gain, (int, float)) or gain <= 0):
            errors.append("[checks].gain: must be a positive number")
        gain_scale = chk_tab.get("gain_scale", 1.0)
        if not isinstance(gain_scale, (int, float)) or gain_scale <= 0:
            errors.append("[checks].gain_scale: must be a positive number")
        if gain_scale != 1.0 and system_name in ("pi", "nonsmooth_pi"):
            errors.append("[checks].gain_scale: PI certificates have no single gain to scale")

    # [compose]
    compose_name, compose_params = None, {}
    if "compose" in checks:
        cmp_tab = data.get("compose")
        if not isinstance(cmp_tab, dict) or "name" not in cmp_tab:
            errors.append("[compose]: required (with key 'name') when the compose check runs")
        else:
            compose_name = str(cmp_tab["name"])
            if compose_name not in _SYSTEM_KEYS:
                errors.append(f"[compose].name: unknown system {compose_name!r}")
            else:
                for key in cmp_tab:
                    if key not in _SYSTEM_KEYS[compose_name]:
                        errors.append(f"[compose].{key}: unknown key for {compose_name}")
                compose_params = {k: v for k, v in cmp_tab.items() if k != "name"}
                try:
                    make_system(compose_name, compose_params)
                except (CatalogError, TypeError) as exc:
                    errors.append(f"[compose]: {exc}")

    # [tolerances]
    tol_tab = data.get("tolerances", {})
    tolerances = {}
    if not isinstance(tol_tab, dict):
        errors.append("[tolerances]: must be a table")
    else:
        for key in tol_tab:
            if key not in _TOL_KEYS:
                errors.append(f"[tolerances].{key}: unknown key")
            else:
                tolerances[key] = float(tol_tab[key])

    # cross-field constraints
    if system_name and solver and x0:
        d_x = 2 if system_name in ("pi", "nonsmooth_pi") else 1
        if "compose" not in checks and len(x0) != d_x:
            errors.append(f"[simulation].x0: expected {d_x} state(s) for {system_name}")

    if errors:
        return None, errors

    return ScenarioConfig(
        title=title,
        system_name=system_name,
        system_params=system_params,
        input_kind=input_kind,
        input_params=input_params,
        x0=x0,
        solver=solver or SolverConfig(),
        checks=checks,
        forms=forms,
        gain=gain,
        gain_scale=float(gain_scale),
        compose_name=compose_name,
        compose_params=compose_params,
        tolerances=tolerances,
    ), []


# ---------------------------------------------------------------------------
# scenario execution
# ---------------------------------------------------------------------------


def _resolve_certificate(system, form, cfg):
    gamma = cfg.gain
    if system.name in ("pi", "nonsmooth_pi"):
        return certificate_catalog(system, form)
    if gamma is None:
        family = certificate_family(system, form)
        gamma = family.default_gamma
        if math.isnan(gamma):
            gamma = fit_gain(system, form).gamma
    return certificate_catalog(system, form, gamma=gamma * cfg.gain_scale)


def _status_of(flag) -> str:
    if isinstance(flag, str):
        return flag
    return "PASS" if flag else "FAIL"


def run_scenario(cfg: ScenarioConfig, out_dir, tol_pw=None, tol_int=None,
                 echo=print) -> int:
    """Run every requested check, write artifacts, return the exit code."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tol_pw = tol_pw if tol_pw is not None else cfg.tolerances.get("pointwise")
    tol_int = tol_int if tol_int is not None else cfg.tolerances.get("integral")

    statuses: list[str] = []
    results: dict = {"title": cfg.title, "system": cfg.system_name,
                     "input": cfg.input_kind, "checks": {}}

    def record(name: str, status: str, detail: str, payload) -> None:
        statuses.append(status)
        results["checks"][name] = payload
        echo(f"CHECK {name}: {status} ({detail})")

    try:
        system = make_system(cfg.system_name, cfg.system_params)
        sig = make_signal(cfg.input_kind, **cfg.input_params)
        x0 = np.asarray(cfg.x0 or np.zeros(system.d_x), dtype=float)

        needs_traj = any(c in cfg.checks for c in
                         ("pointwise", "integral", "wfgs", "barbalat", "robust-gain"))
        traj = None
        if needs_traj or "compose" not in cfg.checks:
            traj = simulate(system, sig, x0, cfg.solver)
            traj.to_csv(out / "trajectory.csv")

        certs = {}
        if any(c in cfg.checks for c in ("pointwise", "integral", "wfgs", "barbalat")):
            for form in (("nhp", "anhp") if "barbalat" in cfg.checks else cfg.forms):
                certs[form] = _resolve_certificate(system, form, cfg)

        for form in cfg.forms:
            if "pointwise" in cfg.checks or "integral" in cfg.checks:
                rep = evaluate_certificate(certs[form], traj, tol_pw=tol_pw,
                                           tol_int=tol_int, probe_id=cfg.title)
                rep.margin_csv(out / f"margin_{form}.csv")
                if "pointwise" in cfg.checks:
                    record(f"pointwise[{form}]", _status_of(rep.pass_pointwise),
                           f"min margin {rep.min_margin:.3e} at t={rep.argmin_time:.3g}",
                           rep.to_json_dict())
                if "integral" in cfg.checks:
                    record(f"integral[{form}]", _status_of(rep.pass_integral),
                           f"slack {rep.slack:.3e}", rep.to_json_dict())
            if "wfgs" in cfg.checks:
                cert = certs[form]
                channel = "y" if form == "nhp" else "dy"
                v0 = float(cert.storage_series(traj)[0])
                rep = wfgs_check(traj, cert.supply.cost_on(channel),
                                 cert.supply.input_gain, v0, channel=channel)
                record(f"wfgs[{form}]", _status_of(rep.passed),
                       f"min prefix slack {rep.min_slack:.3e}", rep.to_json_dict())

        if "barbalat" in cfg.checks:
            thr = BarbalatThresholds(
                tail_fraction=cfg.tolerances.get("tail_fraction", 0.2),
                tail_tol=cfg.tolerances.get("tail", 1e-3),
            )
            rep = barbalat_verdict(traj, certs["nhp"], certs["anhp"], thr)
            record("barbalat", rep.verdict,
                   f"tail sup |y| = {rep.tail_sup_y:.3e}; {rep.reason}",
                   rep.to_json_dict())

        if "fenchel" in cfg.checks:
            lam = system.params.get("lam")
            if lam is None:
                record("fenchel", "FAIL", "system has no rate parameter", {})
            else:
                rep = fenchel_check(lam)
                record("fenchel", _status_of(rep.passed),
                       f"min slack {rep.min_slack:.3e}", rep.to_json_dict())

        if "sector" in cfg.checks:
            spec = system.params.get("sector")
            if spec is None:
                record("sector", "FAIL", "not a sector system", {})
            else:
                rep = sector_estimates_check(spec)
                ok = rep.membership.passed and rep.power_estimate.passed
                record("sector", _status_of(ok),
                       f"membership slack {rep.membership.min_slack:.3e}, "
                       f"shortcut slack {rep.shortcut_slack:.3e} (reported only)",
                       rep.to_json_dict())

        if "psi" in cfg.checks:
            kp = system.params.get("kp")
            ki = system.params.get("ki")
            ks = system.params.get("ks", 0.0)
            if kp is None or ks == 0.0:
                record("psi", "FAIL", "needs the nonsmooth PI system", {})
            else:
                svals = [0.0, 0.25, 0.5, 1.0, 2.0, 5.0]
                r_grid = np.linspace(-10.0, 10.0, 100_001)
                worst = max(
                    abs(float(psi_eval(kp, ki, ks, s))
                        - psi_numeric_sup(kp, ki, ks, s, r_grid))
                    for s in svals)
                record("psi", _status_of(worst <= 1e-4),
                       f"max |closed form - grid sup| = {worst:.3e}",
                       {"max_abs_difference": worst, "s_values": svals})

        if "robust-gain" in cfg.checks:
            rep = robust_gain_inequality_check(traj, system)
            record("robust-gain", _status_of(rep.passed),
                   f"min prefix slack {rep.min_slack:.3e}", rep.to_json_dict())

        if "compose" in cfg.checks:
            downstream = make_system(cfg.compose_name, cfg.compose_params)
            series = compose_series(system, downstream)
            probes = [Probe("scenario", sig)]
            rep = composition_theorem_report(
                series,
                _resolve_certificate(system, "nhp", cfg),
                _resolve_certificate(system, "anhp", cfg),
                _resolve_certificate(downstream, "nhp", cfg),
                _resolve_certificate(downstream, "anhp", cfg),
                probes, cfg.solver)
            record("compose", _status_of(rep.passed),
                   f"gain product {rep.gain_product:.4g}", rep.to_json_dict())

        if "fit-gain" in cfg.checks:
            payload = {}
            ok = True
            for form in cfg.forms:
                fit = fit_gain(system, form, solver=cfg.solver)
                payload[form] = fit.to_json_dict()
                echo(f"  fitted {form} gain: {fit.gamma:.6g}")
            record("fit-gain", _status_of(ok),
                   ", ".join(f"{f}: {payload[f]['gamma']:.4g}" for f in cfg.forms),
                   payload)

    except (SimulationDiverged, StepUnderflow) as exc:
        echo(f"ERROR: simulation failed: {exc}")
        results["error"] = str(exc)
        reporting.write_json(out / "verdict.json", results)
        return EXIT_RUNTIME
    except (CatalogError, SignalError, CertificateError, NoPassingGainError,
            MonotonicityError) as exc:
        echo(f"ERROR: {exc}")
        results["error"] = str(exc)
        reporting.write_json(out / "verdict.json", results)
        return EXIT_RUNTIME

    results["summary"] = {
        "pass": statuses.count("PASS"),
        "fail": statuses.count("FAIL"),
        "inconclusive": statuses.count("INCONCLUSIVE"),
    }
    reporting.write_json(out / "verdict.json", results)

    if "FAIL" in statuses:
        return EXIT_FAIL
    if "INCONCLUSIVE" in statuses:
        return EXIT_INCONCLUSIVE
    return EXIT_PASS


# ---------------------------------------------------------------------------
# catalog listing
# ---------------------------------------------------------------------------

_PARAM_SCHEMAS = {
    "linear_hp": {"lambda": "rate > 0"},
    "sinh_hp": {"lambda": "rate > 0"},
    "cubic_hp": {"lambda": "rate > 0"},
    "sector_hp": {"lambda": "rate > 0", "alpha": "lower slope > 0",
                  "beta": "upper slope >= alpha",
                  "phi": "saturated_linear | rational_blend | tanh_blend",
                  "knee": "saturation knee > 0"},
    "pi": {"kp": "proportional gain > 0", "ki": "integral gain > 0"},
    "nonsmooth_pi": {"kp": "proportional gain > 0", "ki": "integral gain > 0",
                     "ks": "switching gain > 0",
                     "delta": "sign smoothing width >= 0"},
}

_CERT_AVAILABILITY = {
    "linear_hp": {"nhp": "gamma = 1/lambda", "anhp": "gamma1 = 2"},
    "sinh_hp": {"nhp": "gamma = 2/lambda", "anhp": "gamma1 = 2"},
    "cubic_hp": {"nhp": "gamma = 1/lambda", "anhp": "gamma1 fitted"},
    "sector_hp": {"nhp": "gamma = (alpha+beta)/(lambda*alpha*beta), refinable",
                  "anhp": "derived from the sector estimates, refinable"},
    "pi": {"nhp": "psi-based supply", "anhp": "psi-based supply"},
    "nonsmooth_pi": {"nhp": "psi-based supply", "anhp": "psi-based supply"},
}


def list_catalog(fmt: str = "text") -> str:
    if fmt == "json":
        payload = {
            name: {"parameters": _PARAM_SCHEMAS[name],
                   "certificates": _CERT_AVAILABILITY[name]}
            for name in catalog_names()
        }
        return reporting.dumps_json(payload)
    lines = []
    for name in catalog_names():
        lines.append(name)
        for key, desc in _PARAM_SCHEMAS[name].items():
            lines.append(f"  param {key}: {desc}")
        for form, desc in _CERT_AVAILABILITY[name].items():
            lines.append(f"  cert {form}: {desc}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def _load_scenario(path: Path):
    cfg, errors = parse_config(path.read_text(encoding="utf-8"))
    if errors:
        for err in errors:
            print(f"{path}: {err}", file=sys.stderr)
        return None
    return cfg


def _scenario_dir():
    from importlib.resources import files

    return files("nhpkit") / "scenarios"


def _cmd_scenario(args, restrict=None) -> int:
    import dataclasses

    cfg = _load_scenario(Path(args.config))
    if cfg is None:
        return EXIT_CONFIG
    if restrict is not None:
        checks = tuple(c for c in cfg.checks if c in restrict) or restrict
        cfg = dataclasses.replace(cfg, checks=checks)
    return run_scenario(cfg, Path(args.out), tol_pw=args.tol_pw, tol_int=args.tol_int)


def _cmd_corpus(args) -> int:
    base = Path(args.out)
    scenarios = sorted(_scenario_dir().iterdir(), key=lambda p: p.name)
    scenarios = [p for p in scenarios if p.name.endswith(".toml")]
    codes = {}

    def run_one(res):
        cfg, errors = parse_config(res.read_text(encoding="utf-8"))
        if errors:
            return res.name, EXIT_CONFIG, [f"{res.name}: {e}" for e in errors]
        lines = []
        code = run_scenario(cfg, base / res.name.removesuffix(".toml"),
                            tol_pw=args.tol_pw, tol_int=args.tol_int,
                            echo=lambda msg: lines.append(str(msg)))
        return res.name, code, lines

    with concurrent.futures.ThreadPoolExecutor(max_workers=args.workers) as pool:
        for name, code, lines in pool.map(run_one, scenarios):
            codes[name] = code
            for line in lines:
                print(f"[{name}] {line}")
            print(f"[{name}] exit {code}")

    worst = max(codes.values(), default=EXIT_PASS)
    print(f"corpus: {sum(1 for c in codes.values() if c == 0)}/{len(codes)} scenarios passed")
    return worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nhpkit",
        description="simulate nonlinear high-pass systems and verify their "
                    "dissipation certificates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--tol-pw", type=float, default=None,
                       help="pointwise margin tolerance override")
        p.add_argument("--tol-int", type=float, default=None,
                       help="integral slack tolerance override")

    p_list = sub.add_parser("list", help="list catalog systems and certificates")
    p_list.add_argument("--format", choices=("text", "json"), default="text")

    for name, helptext in (
        ("simulate", "simulate a scenario and write the trajectory CSV"),
        ("verify", "run the scenario's configured checks"),
        ("gain", "fit the smallest passing certificate gain"),
        ("compose", "run the series-composition checks"),
        ("ineq", "run the closed-form inequality checks"),
    ):
        add_common(sub.add_parser(name, help=helptext))

    p_corpus = sub.add_parser("corpus", help="run every bundled scenario")
    add_common(p_corpus, config=False)
    p_corpus.add_argument("--workers", type=int, default=2)

    args = parser.parse_args(argv)

    if args.command == "list":
        print(list_catalog(args.format))
        return EXIT_PASS
    if args.command == "simulate":
        return _cmd_scenario(args, restrict=())
    if args.command == "verify":
        return _cmd_scenario(args)
    if args.command == "gain":
        return _cmd_scenario(args, restrict=("fit-gain",))
    if args.command == "compose":
        return _cmd_scenario(args, restrict=("compose",))
    if args.command == "ineq":
        return _cmd_scenario(args, restrict=("fenchel", "sector", "psi"))
    if args.command == "corpus":
        return _cmd_corpus(args)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
