import numpy as np
import pytest

from trollgraph.graph import Graph, build_graph
from trollgraph.ingest import EdgeEvent, Relation

# acceptance lines collected by tests/test_acceptance.py, shown after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def ev(src, dst, ts=1, rel=Relation.REPLY):
    return EdgeEvent(str(src), str(dst), ts, rel)


def graph_of(pairs, n=None, labels=None):
    """Graph over integer node ids 0..n-1 (ids are zero-padded strings so the
    sorted index matches the integers)."""
    n = n if n is not None else (max(max(p) for p in pairs) + 1 if pairs else 0)
    ids = [f"{i:04d}" for i in range(n)]
    src = [u for u, _ in pairs]
    dst = [v for _, v in pairs]
    return Graph(ids, src, dst, labels=labels)


def random_pairs(rng, n, m, self_loops=False):
    out = []
    while len(out) < m:
        u, v = int(rng.integers(n)), int(rng.integers(n))
        if u != v or self_loops:
            out.append((u, v))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
