import numpy as np
import pytest

from segalab import experiment


@pytest.fixture(scope="session")
def default_cfg():
    return experiment.default_config()


@pytest.fixture(scope="session")
def corpus(default_cfg):
    return experiment.load_or_build_corpus(default_cfg)


@pytest.fixture(scope="session")
def zoo(default_cfg, corpus):
    return experiment.calibrate_zoo(default_cfg, corpus[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary."""

    def record(n, ok, detail):
        _CRITERIA[n] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
