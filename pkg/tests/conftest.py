import numpy as np
import pytest

from hiddennambu.fields import ScalarField

# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion, ok, detail=""):
    ACCEPTANCE[criterion] = (bool(ok), detail)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def quad_maps():
    x = ScalarField.autodiff(2, lambda w: 0.25 * (w[0] ** 2 - w[1] ** 2))
    y = ScalarField.autodiff(2, lambda w: 0.25 * (w[0] ** 2 + w[1] ** 2))
    z = ScalarField.autodiff(2, lambda w: 0.5 * w[0] * w[1])
    return x, y, z


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0][2:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}  {detail}")
