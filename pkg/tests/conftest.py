import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture(scope="session")
def phantom():
    from aarchive.phantoms import make_phantom

    return make_phantom("p001", seed=1)


@pytest.fixture(scope="session")
def implant_phantom():
    from aarchive.phantoms import make_phantom

    return make_phantom("p003", seed=3, prosthesis=True)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
