import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR)


@st.composite
def random_trees(draw, min_nodes=2, max_nodes=40):
    """Raw edge lists of random trees rooted at 0 with shuffled labels and orientation."""
    n = draw(st.integers(min_nodes, max_nodes))
    parents = [draw(st.integers(0, i - 1)) for i in range(1, n)]
    perm = [0] + draw(st.permutations(list(range(1, n))))
    lengths = draw(st.lists(st.floats(1.0, 200.0), min_size=n - 1, max_size=n - 1))
    flips = draw(st.lists(st.booleans(), min_size=n - 1, max_size=n - 1))
    edges = []
    for i, (p, l, f) in enumerate(zip(parents, lengths, flips), start=1):
        a, b = perm[p], perm[i]
        edges.append((b, a, l) if f else (a, b, l))
    return edges


def tree_from_parents(parents, lengths=None):
    n = len(parents) + 1
    lengths = lengths if lengths is not None else np.full(n - 1, 10.0)
    return [(p, i, float(l)) for i, (p, l) in enumerate(zip(parents, lengths), start=1)]


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run acceptance table."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(criterion, passed, detail=""):
        lines.append((criterion, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(lines, key=lambda l: l[0]):
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {detail}")
