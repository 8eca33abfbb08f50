import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(autouse=True)
def _quiet_numerics():
    from svfactor.errors import RepeatedEigenvalueWarning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RepeatedEigenvalueWarning)
        yield


def rank_r_panel(rng, N, T, r, noise=0.0):
    """Loadings (N, r), factors (T, r) and X = L F' + noise."""
    L = rng.standard_normal((N, r))
    F = rng.standard_normal((T, r))
    X = L @ F.T + noise * rng.standard_normal((N, T))
    return L, F, X
