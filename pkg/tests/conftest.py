import numpy as np
import pytest
from hypothesis import strategies as st

from nasgnn.data import gen_synthetic
from nasgnn.graph import OPERATIONS, GraphValidationError, NodeType, validate_graph


@pytest.fixture
def chain():
    return validate_graph(["input", "conv3x3", "output"], [(0, 1), (1, 2)])


@pytest.fixture
def diamond():
    return validate_graph(
        ["input", "conv3x3", "conv1x1", "output"], [(0, 1), (0, 2), (1, 3), (2, 3)]
    )


@pytest.fixture(scope="session")
def small_dataset():
    return gen_synthetic(60, seed=3)


@st.composite
def cells(draw, min_nodes=2, max_nodes=7):
    """Valid cells in slot order (input first, output last)."""
    n = draw(st.integers(min_nodes, max_nodes))
    ops = draw(st.lists(st.sampled_from(OPERATIONS), min_size=n - 2, max_size=n - 2))
    # a backbone chain guarantees every node is on an input->output path
    edges = {(i, i + 1) for i in range(n - 1)}
    extra = [(i, j) for i in range(n) for j in range(i + 2, n)]
    chosen = draw(st.lists(st.sampled_from(extra), unique=True, max_size=9 - len(edges))) if extra else []
    edges |= set(chosen)
    return validate_graph([NodeType.INPUT, *ops, NodeType.OUTPUT], sorted(edges))


@st.composite
def permuted_cells(draw):
    g = draw(cells())
    perm = draw(st.permutations(range(g.num_nodes)))
    return g, list(perm)


def random_params_like(registry, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    for name, p in registry.items():
        p.value[...] = rng.uniform(-scale, scale, size=p.shape)
    return registry


# acceptance criteria report one line each at the end of the session
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
