from datetime import date, timedelta

import numpy as np
import pytest

from prumidas.config import Covariate, ModelSpec
from prumidas.data import PanelDataset


def toy_spec(G=2, H=2, ar_lags=(2,), covariates=None, **kw) -> ModelSpec:
    if covariates is None:
        covariates = (Covariate("xh", "high"), Covariate("xl", "low"))
    return ModelSpec(n_countries=G, freq_mismatch=H, ar_lags=tuple(ar_lags), covariates=tuple(covariates), **kw)


def random_panel(spec: ModelSpec, days: int, rng, start=date(2022, 1, 1)) -> PanelDataset:
    """Unstandardized random panel (fine for design/sampler algebra tests)."""
    G, H = spec.G, spec.H
    return PanelDataset(
        spec=spec,
        countries=[f"C{g}" for g in range(G)],
        dates=[start + timedelta(days=k) for k in range(days)],
        y=rng.standard_normal((G, days * H)),
        x_high=rng.standard_normal((G, days * H, spec.n_high)),
        x_low=rng.standard_normal((G, days, spec.n_low)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
