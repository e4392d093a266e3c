import warnings

import numpy as np
import pytest

from stable_sde.field import MatrixField

# numba probes for TBB on import; the fallback threading layer is fine
warnings.filterwarnings("ignore", message=".*TBB.*")

PERTURBED = [["1 + 0.1*sin(x2)", "0.1*sin(x1)"], ["0.1*cos(x1)", "1 + 0.1*sin(x1*x2)"]]


@pytest.fixture(scope="session")
def perturbed_field():
    return MatrixField.from_strings(PERTURBED, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance report: one line per criterion ------------------------------------

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[mark.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s.split()[0][1:])):
        status, detail = _CRITERIA[label]
        terminalreporter.write_line(f"{status} {label}" + (f" ({detail})" if detail else ""))
