import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_tree(rng, n=None, d=None, depth=None, distinct=True):
    """Grow a tree on random data; returns (tree, X, y)."""
    from nrf.cart import MaxDepth, grow_tree
    n = n or int(rng.integers(2, 80))
    d = d or int(rng.integers(1, 5))
    depth = depth or int(rng.integers(1, 7))
    X = rng.uniform(size=(n, d))
    if not distinct:
        X = np.round(X * 4) / 4
    y = rng.normal(size=n) * 5
    tree = grow_tree(np.arange(n), (X, y), MaxDepth(depth), rng=rng)
    return tree, X, y


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
