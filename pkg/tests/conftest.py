import mpmath as mp
import pytest


def mp_step(mu, s, r, v, dps=None):
    """Moment-map step in arbitrary precision, straight from the Gamma identities.

    ``dps=None`` keeps the caller's precision (mp.diff raises it internally).
    """
    with mp.workdps(dps or max(mp.mp.dps, 50)):
        mu, s, r, v = (mp.mpf(x) for x in (mu, s, r, v))
        k = mu**2 / s
        theta = s / mu
        m1 = mp.exp(r) * mu / (1 + r * theta) ** (k + 1)
        m2 = v * mp.exp(2 * r) * (mu**2 + s) / (1 + 2 * r * theta) ** (k + 2)
        return m1, m2 - m1**2


@pytest.fixture
def mp_map():
    return mp_step


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
