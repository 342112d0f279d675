import numpy as np
import pytest
from hypothesis import settings

import lenet  # noqa: F401  (registers image.mnist.LeNet5)
import seqframe.model_imports  # noqa: F401
from seqframe import tensor as tn

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _reset_flags():
    saved = (tn.FLAGS.enable_asserts, tn.FLAGS.enable_check_numerics)
    yield
    tn.set_flags(*saved)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when == "teardown":
        return
    number, title = mark.args
    passed = report.passed and _criteria.get(number, (title, True))[1]
    if report.when == "call" or not report.passed:
        _criteria[number] = (title, passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}")
