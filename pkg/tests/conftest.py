import sys
from pathlib import Path

import pytest
from hypothesis import settings

from etswarm.gene import compile_gene, parse_bitmap
from etswarm.scenario import bundled_bitmap

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

# criterion number -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def load_shape(name):
    return compile_gene(parse_bitmap(bundled_bitmap(name).read_text()))


@pytest.fixture(scope="session")
def t_gene():
    return load_shape("t_shape")


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIOS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
