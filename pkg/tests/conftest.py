import numpy as np
import pytest

from vesicle_pf.spectral import GridSpec


def band_limited(grid, rng, kmax=3, modes=8):
    """Random smooth field built from a handful of low Fourier modes."""
    x, y, z = grid.coordinates()
    f = np.zeros(grid.shape)
    for _ in range(modes):
        kx, ky, kz = rng.integers(-kmax, kmax + 1, size=3)
        arg = 2 * np.pi * (kx * x / grid.lx + ky * y / grid.ly + kz * z / grid.lz)
        f = f + rng.normal() * np.cos(arg + rng.uniform(0, 2 * np.pi))
    return f


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid16():
    return GridSpec.cube(16)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per acceptance criterion and echo it live."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(number, title, passed, detail):
        line = f"[criterion {number}] {'PASS' if passed else 'FAIL'} {title}: {detail}"
        lines.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
