import time

import numpy as np
import pytest

from bisoncl.config import default_gaussian_config, parse_config
from bisoncl.experiment import run_experiment


@pytest.fixture(scope="session")
def gauss_benchmark():
    """The shipped Split-Gaussian-10 grid (4 methods x 5 seeds, M=200), run
    once per session; several tests read different slices of it."""
    t0 = time.perf_counter()
    report = run_experiment(parse_config(default_gaussian_config()))
    duration = time.perf_counter() - t0
    return report, duration


def aggregate(report, method):
    for agg in report.aggregates:
        if agg["method"] == method:
            return agg
    raise KeyError(method)


def grad_or_zeros(t):
    return t.grad if t.grad is not None else np.zeros_like(t.data)
