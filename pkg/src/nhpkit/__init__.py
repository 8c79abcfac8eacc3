"""nhpkit: numerical verification for nonlinear high-pass input-output systems.

A system is high-pass in the nonlinear sense when its output cost is
bounded by a gain function of the *derivative* of its input.  This package
simulates a catalog of such systems (RC-style filters with linear, sinh,
cubic and sector-bounded resistors, plus PI-controlled integrator loops),
evaluates storage-function/supply-rate certificates along the trajectories,
checks the dissipation inequalities pointwise and in integral form, runs
integral-convergence verdicts for steady-state rejection, fits minimal
certificate gains, and exercises the series-composition property.
"""

from .signals import (
    GainFunction,
    InputSignal,
    SampledSignal,
    SignalError,
    Trace,
    eval_signal,
    integrate_gain,
    lp_seminorm,
    make_signal,
    numeric_derivative,
    tail_sup,
)
from .systems import (
    CatalogError,
    PiSpec,
    SectorSpec,
    SimulationDiverged,
    SolverConfig,
    StepUnderflow,
    SystemModel,
    Trajectory,
    catalog_names,
    cubic_hp,
    linear_hp,
    linear_pi,
    make_system,
    nonsmooth_pi,
    output_derivative,
    pi_closed_loop,
    sector_hp,
    simulate,
    sinh_hp,
)
from .certificates import (
    BarbalatThresholds,
    Certificate,
    CertificateError,
    FitConfig,
    FitResult,
    MonotonicityError,
    NoPassingGainError,
    Probe,
    StorageFunction,
    SupplyRate,
    VerdictReport,
    barbalat_verdict,
    certificate_catalog,
    certificate_family,
    check_integral,
    check_pointwise,
    evaluate_certificate,
    fenchel_check,
    fit_gain,
    psi_eval,
    psi_numeric_sup,
    psi_sup_smooth,
    robust_gain_inequality_check,
    run_battery,
    sector_estimates_check,
    standard_battery,
    steady_state_battery,
    storage_derivative,
    wfgs_check,
)
from .composition import (
    CompositeCertificate,
    CompositionReport,
    IncompatibleGainsError,
    SeriesSystem,
    compose_series,
    composite_certificate,
    composition_theorem_report,
    staged_simulate,
)

__version__ = "0.1.0"
