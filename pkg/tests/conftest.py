import numpy as np
import pytest
from hypothesis import strategies as st

from mrfdetect.gmrf import independence_pair, tree_covariance_completion
from mrfdetect.graph import Graph


def random_tree(n, rng):
    return Graph.from_edges(n, [(int(rng.integers(k)), k) for k in range(1, n)])


def random_forest(n, rng, keep=0.8):
    return Graph.from_edges(n, [(int(rng.integers(k)), k) for k in range(1, n) if rng.random() < keep])


def tree_pair(tree, rng, max_abs=0.9, mean=None):
    corr = {e: float(rng.uniform(-max_abs, max_abs)) for e in tree.sorted_edges}
    return independence_pair(tree_covariance_completion(corr, tree), mean=mean), corr


def random_spd(n, rng):
    a = rng.normal(size=(n, n))
    return a @ a.T + n * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@st.composite
def tree_graphs(draw, min_nodes=1, max_nodes=10):
    n = draw(st.integers(min_nodes, max_nodes))
    parents = [draw(st.integers(0, k - 1)) for k in range(1, n)]
    return Graph.from_edges(n, [(p, k) for k, p in enumerate(parents, start=1)])


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one acceptance line; lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def _report(label, ok, detail):
        line = f"{label} {'PASS' if ok else 'FAIL'}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
