from pathlib import Path

import numpy as np
import pytest

from dlnm_lps import ModelSpec, TimeSeriesPanel, fit_dlnm
from dlnm_lps.simgen import synthetic_exposure

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "demos" / "data"

_CRITERIA = {}


def record_criterion(number, ok, detail=""):
    _CRITERIA[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_panel():
    """Six areas, 120 days, effect modified linearly by z."""
    rng = np.random.default_rng(42)
    J, T = 6, 120
    x = synthetic_exposure(J, T, rng)
    z = np.linspace(-0.6, 0.6, J)
    lagged = np.stack([np.roll(x, k, axis=1) for k in range(4)], axis=2)
    eff = 0.03 * ((lagged - 5) * np.exp(-np.arange(4) / 2)).sum(axis=2) * (1 + z[:, None])
    pop = np.full(J, 2e5)
    y = rng.poisson(np.exp(np.log(pop)[:, None] - 8 + eff))
    return TimeSeriesPanel(y, x, population=pop, modifier=z)


@pytest.fixture(scope="session")
def small_spec():
    return ModelSpec(modifier="linear", v_x=5, v_l=4, max_lag=3)


@pytest.fixture(scope="session")
def fitted_linear(small_panel, small_spec):
    return fit_dlnm(small_panel, small_spec)


@pytest.fixture(scope="session")
def fitted_none(small_panel, small_spec):
    return fit_dlnm(small_panel, small_spec.with_(modifier="none", main_effect_z="none"))
