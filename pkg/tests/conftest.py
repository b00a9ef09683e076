import numpy as np
import pytest

from nodectl.core import Dataset


def random_dataset(rng: np.random.Generator, N: int, d: int, scale: float = 1.0) -> Dataset:
    """Inputs and targets drawn uniformly from ``[-scale, scale]^d``."""
    X = rng.uniform(-scale, scale, (N, d))
    Y = rng.uniform(-scale, scale, (N, d))
    return Dataset(X, Y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one of the numbered acceptance criteria")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    detail = dict(item.user_properties).get("detail", "")
    prev = _ACCEPTANCE.get(number)
    ok = passed and (prev is None or prev[1])
    _ACCEPTANCE[number] = (title, ok, detail if not prev else "; ".join(x for x in (prev[2], detail) if x))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
