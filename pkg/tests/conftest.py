"""Collects acceptance results and prints one PASS/FAIL line per criterion."""
import pytest

_RESULTS = {}


@pytest.fixture
def measured(request):
    """Dict a criterion test fills with the values it measured; shown in the summary."""
    values = {}
    request.node.user_properties.append(("measured", values))
    return values


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed
    if report.when == "call" or failed:
        entry = _RESULTS.setdefault(number, [title, True, {}])
        entry[1] = entry[1] and not failed
        entry[2].update(dict(item.user_properties).get("measured", {}))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, ok, values = _RESULTS[number]
        detail = ", ".join(f"{k}={_fmt(v)}" for k, v in values.items())
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "/".join(_fmt(x) for x in v)
    return str(v)
