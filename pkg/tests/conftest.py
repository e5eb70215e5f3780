import numpy as np
import pytest

from simdmimo.tensor import PrecisionMode


def crandn(rng, *shape, scale=1.0):
    """Unit-variance circular complex Gaussian samples."""
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def rel_fro(a, b):
    """||a - b||_F / ||b||_F, with b = 0 treated as an absolute error."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / (den if den > 0 else 1.0))


PATH_TOL = {PrecisionMode.PS: 1e-5, PrecisionMode.PD: 1e-12}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
