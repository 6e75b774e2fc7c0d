import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def rig128():
    from hyperdrive.config import test_rig

    return test_rig()


@pytest.fixture(scope="session")
def flat_rig():
    from hyperdrive.config import identity_rig

    return identity_rig(128)


@pytest.fixture(scope="session")
def scene64():
    from hyperdrive.simgen import generate_scene

    return generate_scene(7, 64, 64, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------- acceptance summary

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = mark.args
    measured = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA[number] = ("PASS" if report.passed else "FAIL", title, measured)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, measured = _CRITERIA[number]
        line = f"{status} {number:2d} {title}"
        terminalreporter.write_line(line + (f"  [{measured}]" if measured else ""))
