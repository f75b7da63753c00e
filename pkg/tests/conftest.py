import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_problem(rng, n, p, k_unpen=0, lam_frac=0.3, groups=None):
    """Random penalized problem; the first ``k_unpen`` columns are unpenalized."""
    from hetnet.lasso_core import PenalizedProblem, lambda_max

    Z = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: max(1, p // 4)] = rng.normal(0, 2, size=max(1, p // 4))
    y = Z @ beta + rng.standard_normal(n)
    mask = np.ones(p, dtype=bool)
    mask[:k_unpen] = False
    base = PenalizedProblem(Z, y, mask, groups=groups)
    lam = lam_frac * lambda_max(base)
    return base.with_lambda(lam, lam if groups is not None else 0.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
