import numpy as np
import pytest

from silkin import (
    CoefficientFamily,
    ModelParams,
    RateTable,
    State,
    TruncatedSystem,
)


def rates_from_arrays(n, k, p, q, gamma=0.0):
    return RateTable(n=n, k=np.asarray(k, float), p=np.asarray(p, float), q=np.asarray(q, float), gamma=gamma)


def constant_rates(n, k=0.0, p=0.0, q=0.0):
    full = np.full(n + 1, 1.0)
    return rates_from_arrays(n, k * full, p * full, q * full)


def power_law_system(n, gamma, r=0.4, alpha=0.3, k_amp=1.0, p_amp=0.7, q_amp=0.5, q_exp=1.0):
    from silkin import realize_coefficients

    rates = realize_coefficients(
        CoefficientFamily.power_law(k_amp, gamma),
        CoefficientFamily.constant(p_amp),
        CoefficientFamily.power_law(q_amp, q_exp),
        n,
    )
    return TruncatedSystem(ModelParams(r=r, alpha=alpha), rates)


def decaying_state(n, x0=1.0, b=1.0, rho=0.5, t=0.0):
    return State(t=t, x=x0, M=b * rho ** np.arange(n + 1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
