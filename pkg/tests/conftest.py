import numpy as np
import pytest

from cofactor_lab import MetricField, OneFormField, SystemSpec, TensorField11, parse_expr
from cofactor_lab.specfile import load_fixture

# criterion number -> (passed, title, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {k}: {title} ({detail})")


def exprs(rows):
    return [[parse_expr(str(v)) for v in r] for r in rows]


def make_spec(coords, metric, J, forces, m, params=None, **kw):
    params = params or {}
    g = MetricField(exprs(metric), coords, params)
    Jf = TensorField11(exprs(J), coords, params, metric=g)
    mu = OneFormField([parse_expr(str(f)) for f in forces], coords, params)
    return SystemSpec(m, len(coords) - m, coords, params, g, Jf, mu, **kw)


@pytest.fixture(scope="session")
def hh():
    """Example 1 with a=1, c1=1, c2=-1."""
    return load_fixture("henon_heiles_m0b0")


@pytest.fixture(scope="session")
def hh_osc():
    return load_fixture("henon_heiles_oscillatory")


@pytest.fixture(scope="session")
def lin2():
    return load_fixture("linear_2d")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Closed-form oracles for Example 1, coordinates (y, x)
def hh_F1(a, c1, c2, y, x, py, px):
    return (0.5 * (c1 - 4 * c2) * px ** 2 + 2 * a * y * px * py - 2 * a * x * py ** 2
            + 0.5 * c1 * (c1 - 4 * c2) * x ** 2 + a * (c1 - 2 * c2) * x * y ** 2 + 0.5 * a ** 2 * y ** 4)


def hh_F2(a, c1, c2, y, x, py, px):
    return 0.5 * py ** 2 + 0.5 * c2 * y ** 2


def hh_W(a, c1, c2, y, x):
    return 0.5 * c1 * (c1 - 4 * c2) * x ** 2 + a * (c1 - 2 * c2) * x * y ** 2 + 0.5 * a ** 2 * y ** 4


def hh_params(spec):
    p = spec.params
    return p["a"], p["c1"], p["c2"]
