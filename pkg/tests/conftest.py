import numpy as np
import pytest

from wva.meter import TabulatedMeter
from wva.numerics import Grid

ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_tabulated_meter(rng, n=2049, half_width=14.0):
    """Smooth positive amplitude built from a few random Gaussian bumps."""
    grid = Grid.centered(half_width, n)
    x = grid.values
    amp = np.zeros_like(x)
    for _ in range(rng.integers(1, 4)):
        c = rng.uniform(-1.5, 1.5)
        w = rng.uniform(0.6, 1.4)
        amp += rng.uniform(0.3, 1.0) * np.exp(-(x - c) ** 2 / (4 * w * w))
    return TabulatedMeter(grid, amp, normalize=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
