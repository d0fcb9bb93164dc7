import pytest

from wfde.params import validate_parameters

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def p23():
    """d=3, gamma=beta=0, m=2/3: sigma=2, theta=1, zeta=1/4."""
    return validate_parameters(3, 0.0, 0.0, 2.0 / 3.0)


@pytest.fixture(scope="session")
def p34():
    """d=3, gamma=1, beta=0, m=3/4: a weighted regime with sigma=1, theta=2."""
    return validate_parameters(3, 1.0, 0.0, 0.75)
