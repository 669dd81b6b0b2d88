import numpy as np
import pytest

from opk.hilbert import OutputSpace
from opk.kernels import build_kernel

# acceptance lines collected by test_acceptance, echoed after the run
ACCEPTANCE_LINES: dict[int, str] = {}

FOUR_KINDS = ("identity", "separable_multiplication", "nonseparable_multiplication", "rank_one_sum")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def l2_space():
    return OutputSpace.l2(0.0, 1.0, 17)


@pytest.fixture(params=FOUR_KINDS)
def any_kernel(request, l2_space):
    return build_kernel({"kind": request.param}, l2_space)
