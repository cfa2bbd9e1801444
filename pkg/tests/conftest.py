import pytest

from spade_brownian import fisher

FI_LOG = []
ACCEPTANCE = {}


def pytest_configure(config):
    fisher.FI_OBSERVERS.append(FI_LOG.append)


@pytest.fixture
def fi_log():
    return FI_LOG


@pytest.fixture
def criterion():
    """Record one acceptance line; call before asserting so failures are kept."""

    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    if ACCEPTANCE:
        tr.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            ok, detail = ACCEPTANCE[n]
            tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    if FI_LOG:
        bad = [r for r in FI_LOG if not r.within_quantum_bound()]
        tr.section("quantum bound over the session")
        tr.write_line(f"{len(FI_LOG)} Fisher information evaluations, {len(bad)} above 1 + err")
