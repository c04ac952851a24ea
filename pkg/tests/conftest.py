"""Collects one PASS/FAIL line per acceptance criterion and prints them at the end."""

import contextlib
import time

import pytest

RESULTS = []


class Report:
    @contextlib.contextmanager
    def criterion(self, number, title, limit_s=None):
        entry = {"n": number, "title": title, "ok": False, "detail": ""}
        RESULTS.append(entry)
        t0 = time.perf_counter()
        try:
            yield entry
            entry["ok"] = True
        finally:
            elapsed = time.perf_counter() - t0
            entry["detail"] = (entry["detail"] + f" [{elapsed:.1f} s]").strip()
            if entry["ok"] and limit_s is not None and elapsed > limit_s:
                entry["ok"] = False
                entry["detail"] += f" exceeds {limit_s:.0f} s"
                pytest.fail(f"criterion {number} took {elapsed:.1f} s, limit {limit_s} s")


@pytest.fixture(scope="session")
def report():
    return Report()


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for e in sorted(RESULTS, key=lambda e: e["n"]):
        status = e.get("status", "PASS") if e["ok"] else "FAIL"
        terminalreporter.write_line(f"{e['n']}. {status}  {e['title']}  {e['detail']}")
