import numpy as np
import pytest

from meshfield import shapes
from meshfield.mesh import TriangleMesh, normalize_mesh
from meshfield.spectral import precompute_operators


def equilateral():
    v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, np.sqrt(3) / 2, 0.0]])
    return TriangleMesh(v, np.array([[0, 1, 2]]))


@pytest.fixture(scope="session")
def small_sphere():
    return normalize_mesh(shapes.sphere(50))


@pytest.fixture(scope="session")
def small_ops(small_sphere):
    return precompute_operators(small_sphere, 50, with_gradients=True)


@pytest.fixture(autouse=True)
def _no_cache(monkeypatch):
    # keep eigen caches out of the user's environment during tests
    monkeypatch.delenv("MESHFIELD_CACHE_DIR", raising=False)


ACCEPTANCE_LINES = []


def record(criterion, title, ok, detail):
    """Log an acceptance verdict; the terminal summary prints every line."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
