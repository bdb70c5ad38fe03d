import numpy as np
import pytest

from polyshoot import (
    EquationSpec,
    IntegratorConfig,
    integrate,
    linear_profile,
    cubic_profile,
)


@pytest.fixture(scope="session")
def spec2():
    return EquationSpec.for_order(2)


@pytest.fixture(scope="session")
def spec3():
    return EquationSpec.for_order(3)


@pytest.fixture(scope="session")
def u0():
    return linear_profile()


@pytest.fixture(scope="session")
def u1():
    return cubic_profile()


@pytest.fixture(scope="session")
def traj_u0_50(spec2, u0):
    return integrate(spec2, u0.jet(), IntegratorConfig(r_max=50.0))


@pytest.fixture(scope="session")
def traj_u0_1000(spec2, u0):
    return integrate(spec2, u0.jet(), IntegratorConfig(r_max=1000.0))


@pytest.fixture(scope="session")
def traj_u1_10(spec3, u1):
    return integrate(spec3, u1.jet(), IntegratorConfig(r_max=10.0))


def common_grid(t1, t2):
    """Trim two trajectories to their shared leading sample grid."""
    n = min(len(t1), len(t2))
    while n > 0 and abs(t1.r[n - 1] - t2.r[n - 1]) > 1e-12:
        n -= 1
    return n
