import numpy as np
import pytest

from mrlreg import Dataset, IndexMatrix
from mrlreg.kernel import BandwidthConfig, Bandwidths, KernelKind


def tiny_dataset(seed, n=None, p=3, with_ties=False, censor=True):
    """Small random dataset with both groups populated."""
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(6, 11))
    x = rng.standard_normal((n, p))
    z = rng.exponential(1.0, n) + 0.05
    if with_ties:
        z[1] = z[0]
        z[3] = z[2]
    delta = rng.random(n) < 0.75 if censor else np.ones(n, bool)
    delta[:2] = True
    w = [None] * n
    k = max(3, n // 2)
    for i in range(n - k, n):
        w[i] = float(z[i] * rng.uniform(0.1, 0.8))
    delta[-2:] = True
    return Dataset(x, z, delta, w)


def tiny_setup(seed, d=1, with_ties=False):
    rng = np.random.default_rng(1000 + seed)
    p = d + 2
    data = tiny_dataset(seed, p=p, with_ties=with_ties)
    beta = IndexMatrix(d, rng.uniform(-0.8, 0.8, (p - d, d)))
    kind = KernelKind.GAUSS2 if d == 1 else KernelKind.GAUSS4
    h = tuple(rng.uniform(0.8, 1.5, d))
    bws = Bandwidths(
        BandwidthConfig(h, float(rng.uniform(0.3, 0.8)), kind),
        BandwidthConfig(h + (float(rng.uniform(0.5, 1.0)),), float(rng.uniform(0.3, 0.8)), kind),
    )
    return data, beta, bws


@pytest.fixture(params=range(4))
def tiny(request):
    return tiny_setup(request.param, d=1 + request.param % 2)


# -- acceptance report ----------------------------------------------------------

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome; the summary prints them in order."""

    def record(number, ok, detail):
        _CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
