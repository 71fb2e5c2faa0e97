import pytest

_VERDICTS: dict[int, tuple[bool, str, str]] = {}


class Verdicts:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def record(self, number: int, title: str, ok: bool, detail: str = "") -> bool:
        _VERDICTS[number] = (bool(ok), title, detail)
        print(self.line(number))
        return bool(ok)

    @staticmethod
    def line(number: int) -> str:
        ok, title, detail = _VERDICTS[number]
        return f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        terminalreporter.write_line(Verdicts.line(n))
