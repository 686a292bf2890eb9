import pytest

from bbmlab.spectral import solve_spectrum


@pytest.fixture(scope="session")
def sys_a1():
    """alpha = 1 system reused across modules (Airy-comparable)."""
    return solve_spectrum(1.0, 30, accuracy=1e-7)


@pytest.fixture(scope="session")
def sys_a1_small():
    return solve_spectrum(1.0, 5)


@pytest.fixture(scope="session")
def sys_a2():
    """alpha = 2 system (harmonic oscillator, fully analytic)."""
    return solve_spectrum(2.0, 8)
