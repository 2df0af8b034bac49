import numpy as np
import pytest

from eulerplate.fields import Grid

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties if k != "skip")
    if rep.failed and rep.when == "setup":
        detail = "setup error"
    previous = _CRITERIA.get(number)
    passed = rep.passed and (previous is None or previous[1])
    details = detail if previous is None else "; ".join(x for x in (previous[2], detail) if x)
    _CRITERIA[number] = (title, passed, details)
    line = f"criterion {number:2d} {'PASS' if rep.passed else 'FAIL'}: {title}" + (f" [{detail}]" if detail else "")
    print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title}")
        if detail:
            terminalreporter.write_line(f"    {detail}")


@pytest.fixture(scope="session")
def grid32():
    return Grid(32, 32, 17)


@pytest.fixture(scope="session")
def grid16():
    return Grid(16, 16, 17)


def random_plate(grid, amplitude, seed, n_modes=5, kmax=2):
    """Zero-mean random combination of low modes scaled to max |w| = amplitude."""
    rng = np.random.default_rng(seed)
    x1, x2 = grid.mesh2()
    w = np.zeros(grid.shape2)
    for _ in range(n_modes):
        k1, k2 = rng.integers(-kmax, kmax + 1, size=2)
        if k1 == 0 and k2 == 0:
            k1 = 1
        w += rng.normal() * np.cos(2 * np.pi * (k1 * x1 + k2 * x2) + rng.uniform(0, 2 * np.pi))
    w -= w.mean()
    return amplitude * w / np.max(np.abs(w))


@pytest.fixture(scope="session")
def make_plate():
    return random_plate
