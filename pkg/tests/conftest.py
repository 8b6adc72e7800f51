import sys
from pathlib import Path

import pytest
from hypothesis import settings

# wall-clock deadlines make property tests flaky on a loaded machine
settings.register_profile("charlm", deadline=None)
settings.load_profile("charlm")

sys.path.insert(0, str(Path(__file__).parent))

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "latex"


@pytest.fixture(scope="session")
def fixture_corpus():
    from charlm.corpus import build_corpus
    return build_corpus(FIXTURE_DIR, min_count=2)


# criterion number -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
