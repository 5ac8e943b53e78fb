import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def coarse_problem():
    """Strut/twist case on a 50 mm grid with a 6-section panel mesh."""
    from wingopt import config
    from wingopt.problem import WingProblem
    from wingopt.verify import coarse_config
    return WingProblem(coarse_config(config.preset("strut_twist")))


@pytest.fixture(scope="session")
def coarse_eval(coarse_problem):
    x = coarse_problem.initial_point()
    return x, coarse_problem.evaluate(x, 1.0, 6000.0)


# acceptance criteria: one line per criterion in the terminal summary
ACCEPTANCE = {}
N_CRITERIA = 11


@pytest.fixture
def record():
    def _record(number, passed, detail):
        ACCEPTANCE.setdefault(number, []).append((bool(passed), detail))
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in str(r.nodeid) for rs in terminalreporter.stats.values()
              for r in rs if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        parts = ACCEPTANCE.get(n)
        if not parts:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  (not evaluated: test errored or was skipped)")
            continue
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
