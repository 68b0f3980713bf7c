import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fleetmdp.network import Network, build_grid  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def random_network(rng, n_nodes, extra_arcs=None, max_time=300):
    """Random strongly connected digraph: a Hamiltonian cycle plus random chords."""
    perm = rng.permutation(n_nodes).tolist()
    arcs = []
    for i in range(n_nodes):
        u, v = perm[i], perm[(i + 1) % n_nodes]
        if u != v:
            arcs.append((u, v, int(rng.integers(30, max_time))))
    m = extra_arcs if extra_arcs is not None else 2 * n_nodes
    for _ in range(m):
        u, v = (int(x) for x in rng.integers(n_nodes, size=2))
        if u != v:
            arcs.append((u, v, int(rng.integers(30, max_time))))
    return Network(n_nodes, arcs)


@pytest.fixture
def grid3():
    return build_grid(3, 3, 60)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
