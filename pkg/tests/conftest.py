import sys
from pathlib import Path

import pytest

from prodinv.model import ModelParams

sys.path.insert(0, str(Path(__file__).parent))

BASE_CFG = Path(__file__).resolve().parents[1] / "src" / "prodinv" / "data" / "example.cfg"


@pytest.fixture(scope="session")
def base():
    return ModelParams()


@pytest.fixture(scope="session")
def toy():
    """3 x 3 states with the two actions {0.5, 1.0}."""
    return ModelParams(gamma_lo=0.5, rate_hi=1.0, grid_step=0.5, n_max=2, i_max=2)


@pytest.fixture(scope="session")
def base_cfg():
    return BASE_CFG


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
