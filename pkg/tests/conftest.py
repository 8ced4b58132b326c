"""Shared fixtures. The radial profiles are expensive and session-cached."""

import numpy as np
import pytest

import txlaw


@pytest.fixture(scope="session")
def identity_spec():
    return txlaw.SigmaSpectrum(s=(1.0,), l=(1000,), N=1000, M=1000)


@pytest.fixture(scope="session")
def fig2_spec():
    return txlaw.SigmaSpectrum(s=(32 / 17, 2 / 17), l=(500, 500), N=1000, M=1000)


@pytest.fixture(scope="session")
def twoband_spec():
    spec, _ = txlaw.normalize_spectrum([8.0, 0.2], [100, 900], 1000, 1000)
    return spec


@pytest.fixture(scope="session")
def opts():
    return txlaw.SolverOptions()


@pytest.fixture(scope="session")
def identity_radial_profile(identity_spec):
    return txlaw.compute_radial_profile(
        identity_spec, 0.1, 2.0, h=0.005, resolution=640
    )


@pytest.fixture(scope="session")
def fig2_radial_profile(fig2_spec):
    return txlaw.compute_radial_profile(fig2_spec, 0.1, 2.0, h=0.005, resolution=640)


def mp_density(x):
    """Closed-form square-ratio limiting density of X^dag X (support [0, 4])."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    m = (x > 0) & (x < 4)
    out[m] = np.sqrt((4.0 - x[m]) / x[m]) / (2.0 * np.pi)
    return out


def mp_stieltjes(w):
    """Closed-form Stieltjes transform: root of w m^2 + w m + 1 with Im m > 0."""
    w = complex(w)
    disc = np.sqrt(w * w - 4 * w)
    for sgn in (1, -1):
        m = (-w + sgn * disc) / (2 * w)
        if m.imag > 0:
            return m
    raise AssertionError("no upper-half-plane root")
