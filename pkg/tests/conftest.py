import time

_SUITE_START = time.time()
_FULL_SUITE_MIN_ITEMS = 150  # only gate runtime when the whole suite runs


def pytest_sessionstart(session):
    session.config._suite_start = time.time()


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.time() - getattr(session.config, "_suite_start", _SUITE_START)
    items = getattr(session, "testscollected", 0)
    if items >= _FULL_SUITE_MIN_ITEMS:
        verdict = "PASS" if elapsed < 300.0 else "FAIL"
        print(f"\n{verdict} criterion 11: full test suite took {elapsed:.1f}s (budget 300s)")
        if verdict == "FAIL":
            session.exitstatus = 1
