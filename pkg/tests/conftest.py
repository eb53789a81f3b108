import csv
import io

import pytest

from livingmeta.ledger import Ledger


def make_csv_export(n, start=0, year=2024, extra_rows=()):
    """Synthetic search export with ``n`` distinct titles."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Title", "Authors", "Year", "Abstract", "DOI"])
    for k in range(start, start + n):
        w.writerow([f"Record number {k}: chatbots and fractions", f"Author {k}", year,
                    "An abstract.", f"10.1000/{k}"])
    for row in extra_rows:
        w.writerow(row)
    return buf.getvalue()


@pytest.fixture
def empty_ledger():
    return Ledger(title="test", version={"version_number": 1, "version_label": "Version 1, 01/26"},
                  search={"date": "2025-12-01"})


# -- acceptance reporting ------------------------------------------------------------

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Call with (number, passed, detail); prints and records one line per criterion."""

    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
