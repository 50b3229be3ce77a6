import numpy as np
import pytest
from hypothesis import settings

from helpers import PipelineRun

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_PIPELINES = {}


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """Cached end-to-end runs keyed by config name."""
    def get(name):
        if name not in _PIPELINES:
            _PIPELINES[name] = PipelineRun(name, tmp_path_factory.mktemp(f"run_{name}"))
        return _PIPELINES[name]
    return get


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
