import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qtraj.model import build_params, k_from_zg

settings.register_profile("qtraj", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("qtraj")

ZG = 1 / np.sqrt(2)


@pytest.fixture
def fig2_params():
    return build_params(1.0, 1.0, np.sqrt(1000.0) / ZG, 200.0, 0.4, k_from_zg(1 / 8, ZG), 1.0)


@pytest.fixture
def small_params():
    """J = 20 with the same scaled dynamics as the J = 200 system."""
    return build_params(1.0, 1.0, np.sqrt(100.0) / ZG, 20.0, 0.4, k_from_zg(1 / 8, ZG), 1.0)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion, printed at session end."""
    store = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        store[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        print(store[number])

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for k in sorted(store):
            terminalreporter.write_line(store[k])
