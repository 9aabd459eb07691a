import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=300, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


_criteria = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_criterion_" in report.nodeid:
        detail = dict(report.user_properties).get("detail", "")
        name = report.nodeid.split("::")[-1]
        _criteria.append((name, "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict, detail in sorted(_criteria):
        terminalreporter.write_line(f"{verdict}  {name}  {detail}".rstrip())
