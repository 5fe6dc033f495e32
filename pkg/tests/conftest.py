import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    from helpers import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance")
        for key in sorted(VERDICTS, key=str):
            terminalreporter.write_line(VERDICTS[key])
