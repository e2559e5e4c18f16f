import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmner import data

settings.register_profile("mmner", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mmner")


@pytest.fixture(scope="session")
def corpus():
    return data.load_corpus()


@pytest.fixture(scope="session")
def tables():
    return data.load_tables(seed=0)


@pytest.fixture(scope="session")
def vocab():
    return data.load_vocab()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line; failing criteria also fail their test."""
    def record(number, passed, detail, skip=False):
        status = "SKIP" if skip else ("PASS" if passed else "FAIL")
        line = f"{status} criterion {number:>2}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        if skip:
            pytest.skip(detail)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
