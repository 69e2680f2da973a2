import collections

ACCEPTANCE = collections.OrderedDict()


def record(criterion: int, label: str, ok: bool, detail: str = "") -> bool:
    """Register one check of an acceptance criterion for the summary."""
    ACCEPTANCE.setdefault(criterion, []).append((label, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        tr.write_line(f"criterion {crit:>2}: {status}")
        for label, ok, detail in parts:
            tr.write_line(f"    [{'pass' if ok else 'FAIL'}] {label}: {detail}")
