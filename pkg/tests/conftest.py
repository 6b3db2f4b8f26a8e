import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from algodisc.qap.instance import QapInstance, qap_loss

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_instance(rng: np.random.Generator, n: int, linear: bool = True, symmetric: bool = False,
                    high: int = 10) -> QapInstance:
    F = rng.integers(0, high, size=(n, n)).astype(float)
    D = rng.integers(0, high, size=(n, n)).astype(float)
    if symmetric:
        F, D = F + F.T, D + D.T
    C = rng.integers(0, high, size=(n, n)).astype(float) if linear else np.zeros((n, n))
    return QapInstance(F, D, C, name=f"rand-n{n}")


def exhaustive_min(inst: QapInstance) -> float:
    return min(qap_loss(inst, np.array(p)) for p in itertools.permutations(range(inst.n)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion and echo it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: [int(p) for p in s.split()[2].rstrip(":").split(".")]):
            terminalreporter.write_line(line)
