import numpy as np
import pytest

from shapematch import build_operators, compute_eigenbasis, normalize_mesh
from shapematch import shapes

_ACCEPTANCE = []


def record_acceptance(name: str, ok: bool, detail: str) -> None:
    _ACCEPTANCE.append((name, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sphere3():
    return shapes.icosphere(3)


@pytest.fixture(scope="session")
def blob2():
    return normalize_mesh(shapes.blob(2))


@pytest.fixture(scope="session")
def blob2_basis(blob2):
    return compute_eigenbasis(build_operators(blob2), 20)


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def central_diff(f, x, direction, h=1e-5):
    return (f(x + h * direction) - f(x - h * direction)) / (2 * h)


def rel_err(a, b) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)
