import time
from contextlib import contextmanager

# criterion number -> (passed, title, detail)
CRITERIA: dict[int, tuple[bool, str, str]] = {}


@contextmanager
def criterion(number: int, title: str, budget_s: float | None = None):
    """Record one acceptance criterion; fails it if the block raises or overruns ``budget_s``."""
    notes: list[str] = []
    t0 = time.perf_counter()
    try:
        yield notes
    except BaseException as e:
        CRITERIA[number] = (False, title, f"{type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}")
        print(f"criterion {number} FAIL  {title}")
        raise
    elapsed = time.perf_counter() - t0
    detail = "; ".join(notes + [f"{elapsed:.2f} s" + (f" (budget {budget_s:g} s)" if budget_s else "")])
    ok = budget_s is None or elapsed < budget_s
    CRITERIA[number] = (ok, title, detail)
    print(f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
    assert ok, f"criterion {number} took {elapsed:.2f} s, budget {budget_s} s"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, title, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
