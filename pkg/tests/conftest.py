import time

import pytest

from uptheriver import stefan


@pytest.fixture(scope="session")
def fine_curve():
    """The production boundary curve: dt = 1e-3 out to t = 2."""
    t0 = time.monotonic()
    curve = stefan.solve_boundary(t_max=2.0, dt=1e-3, root_tol=1e-8)
    curve.solve_seconds = time.monotonic() - t0
    return curve


@pytest.fixture(scope="session")
def fine_profile(fine_curve):
    return stefan.HydroProfile(fine_curve)
