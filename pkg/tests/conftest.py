import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def flip_chain():
    from eagleson.models import InhomogeneousMarkovChain
    return InhomogeneousMarkovChain([[0.9, 0.1], [0.1, 0.9]], [0.5, 0.5], state_values=[-1.0, 1.0])


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, acceptance_log.CRITERIA + 1):
        terminalreporter.write_line(acceptance_log.line(k))
