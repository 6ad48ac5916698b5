import numpy as np
import pytest

from kiplmc.models import GaussianHierarchicalModel, LogisticRegressionModel, generate_synthetic_logistic


@pytest.fixture
def gaussian():
    return GaussianHierarchicalModel([0.5, -1.0], sigma_x=1.0, sigma_y=1.0)


@pytest.fixture
def gaussian_1d():
    return GaussianHierarchicalModel([0.0])


@pytest.fixture(scope="session")
def synthetic_logistic():
    return generate_synthetic_logistic(3, 500, [1.0, 2.0, 3.0], 0.25, seed=0)


@pytest.fixture
def small_logistic():
    rng = np.random.default_rng(3)
    v = rng.standard_normal((40, 3))
    y = (rng.random(40) < 0.5).astype(float)
    return LogisticRegressionModel(v, y, sigma=1.5)


def central_difference(f, z, h=1e-5):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    for k in range(z.size):
        step = h * max(1.0, abs(z[k]))
        e = np.zeros_like(z)
        e[k] = step
        out[k] = (f(z + e) - f(z - e)) / (2 * step)
    return out


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion; echoed in the summary."""

    def report(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
        if detail:
            line += f": {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
