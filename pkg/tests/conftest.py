import re
import sys

import numpy as np
import pytest

from smckit.model import FiniteModel, canonical_two_state


@pytest.fixture
def canonical():
    return canonical_two_state()


@pytest.fixture
def flat_model():
    """g identically one: every estimator is exact."""
    return FiniteModel((0.3, 0.7), [((0.6, 0.4), (0.1, 0.9))] * 2, [(1.0, 1.0)] * 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            m = re.search(r"test_criterion_(\d+)", getattr(rep, "nodeid", ""))
            if m and (rep.when == "call" or status != "passed"):
                outcomes[int(m.group(1))] = status == "passed" and outcomes.get(int(m.group(1)), True)
    if not outcomes:
        return
    mod = next((v for k, v in sys.modules.items() if k.endswith("test_acceptance")), None)
    details = getattr(mod, "RESULTS", {})
    terminalreporter.section("acceptance criteria")
    for k in sorted(outcomes):
        detail = details.get(k, (None, "no result recorded (exception before check)"))[1]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if outcomes[k] else 'FAIL'}  {detail}")
