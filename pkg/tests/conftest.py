import numpy as np
import pytest

from ontime.harness.pipeline import Engine, train_readiness
from ontime.harness.simulate import load_suite, suite_train_config


@pytest.fixture(scope="session")
def easy_suite():
    return load_suite("easy")


@pytest.fixture(scope="session")
def trained_easy(easy_suite):
    """Engine with a readiness head trained on the easy suite, plus its training items."""
    engine = Engine.default(easy_suite[0].dim)
    model, curve, items = train_readiness(easy_suite, engine, cfg=suite_train_config("easy"))
    engine.readiness = model
    return engine, curve, items


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def easy_runs(easy_suite, trained_easy):
    """``{policy: (answers, records, traces)}`` for every policy on the easy suite."""
    from ontime.harness.pipeline import POLICIES, run_suite

    engine = trained_easy[0]
    return {p: run_suite(easy_suite, engine, p) for p in POLICIES}


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}")
