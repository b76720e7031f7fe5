import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> {"title": str, "outcomes": [bool], "notes": [str]}
CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion exercised by the test")


def _entry(item):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return None
    number, title = mark.args
    return CRITERIA.setdefault(number, {"title": title, "outcomes": [], "notes": []})


def pytest_runtest_setup(item):
    e = _entry(item)
    if e is not None:
        item.user_properties.append(("criterion_notes", e["notes"]))


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for key, value in getattr(report, "user_properties", []):
        if key == "criterion":
            CRITERIA[value]["outcomes"].append(report.passed)


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _entry(item)
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(CRITERIA):
        e = CRITERIA[number]
        if not e["outcomes"]:
            verdict = "NOT RUN"
        elif e["title"].startswith("not reproducible"):
            verdict = "N/A"
        else:
            verdict = "PASS" if all(e["outcomes"]) else "FAIL"
        notes = "; ".join(e["notes"])
        tr.write_line(f"criterion {number:2d} {verdict:7s} {e['title']}" + (f" [{notes}]" if notes else ""))
