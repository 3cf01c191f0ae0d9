from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def record(request):
    """Attach a one-line result detail to the running acceptance test."""

    def _record(detail: str) -> None:
        request.node.user_properties.append(("detail", detail))
        print(f"\n  {detail}")

    return _record


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        details = [v for k, v in report.user_properties if k == "detail"]
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE.append((name, report.outcome.upper(), "; ".join(details)))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _ACCEPTANCE:
        status = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  {detail}")
