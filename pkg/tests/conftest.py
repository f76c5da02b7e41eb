import os

import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--workers", type=int, default=None,
                     help="worker processes for heavy statistical tests")


@pytest.fixture(scope="session")
def workers(request):
    opt = request.config.getoption("--workers")
    if opt:
        return opt
    env = os.environ.get("LQG_THREADS")
    if env:
        return max(1, int(env))
    return min(2, os.cpu_count() or 1)


def assert_close(actual, expected, tol, label=""):
    __tracebackhide__ = True
    if abs(actual - expected) > tol:
        pytest.fail(f"{label}: {actual} vs {expected} (tol {tol})")
