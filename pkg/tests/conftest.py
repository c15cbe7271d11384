import pytest

# filled by tests/test_acceptance.py: criterion number -> (passed, detail)
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record_criterion():
    def record(n, ok, detail):
        ACCEPTANCE_RESULTS[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record
