import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nearfield.simulator import Material, default_scenario

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def star_scenario():
    """Default scenario: 256^2 star, 17 keV, delta/beta = 100, four distances."""
    return default_scenario()


@pytest.fixture(scope="session")
def star_data(star_scenario):
    return star_scenario.acquire()


@pytest.fixture(scope="session")
def pure_phase_scenario():
    return default_scenario(material=Material(delta=1e-6, beta=0.0))


@pytest.fixture(scope="session")
def pure_phase_data(pure_phase_scenario):
    return pure_phase_scenario.acquire()


def pytest_terminal_summary(terminalreporter):
    import sys

    results = None
    for mod in list(sys.modules.values()):
        results = getattr(mod, "ACCEPTANCE_RESULTS", None)
        if results:
            break
    if not results:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for key in sorted(results, key=lambda k: int(str(k))):
        checks = results[key]
        status = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        tr.write_line(f"criterion {key}: {status}")
        for label, ok, detail in checks:
            tr.write_line(f"    {'ok ' if ok else 'NOT'} {label}: {detail}")
