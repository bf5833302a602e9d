import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def radial_field(size, cx, cy, sign=-1.0):
    """Field (gx, gy) = sign * (x - cx, y - cy); sign -1 converges on the centre."""
    from madetect.lcf import GradientField
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    return GradientField(sign * (xx - cx), sign * (yy - cy))


# criterion number -> (status, detail); filled by test_acceptance, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status:4s}  {detail}")
