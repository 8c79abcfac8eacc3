import numpy as np
import pytest

import nhpkit as nk


def _params_key(params: dict):
    return tuple(sorted((k, v) for k, v in params.items()
                        if isinstance(v, (int, float, str))))


@pytest.fixture(scope="session")
def battery_runs():
    """Memoized probe-battery simulations keyed by system and horizon."""
    cache: dict = {}

    def get(system, horizon=20.0, probes=None, cfg=None):
        cfg = cfg or nk.SolverConfig(horizon=horizon)
        probes = probes if probes is not None else nk.standard_battery(horizon=horizon)
        key = (system.name, _params_key(system.params), cfg.horizon, cfg.sample_dt,
               tuple(p.id for p in probes))
        if key not in cache:
            cache[key] = nk.run_battery(system, probes, cfg)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def sine_unit():
    return nk.make_signal("sinusoid", amplitude=1.0, omega=1.0)
