from __future__ import annotations

import pytest

from duplex_frontend.scenarios import AssetPools
from duplex_frontend.synthetic import make_demo_assets

# lines reported by the acceptance checks, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def assets_index(tmp_path_factory):
    return make_demo_assets(tmp_path_factory.mktemp("assets"), seed=0)


@pytest.fixture(scope="session")
def pools(assets_index):
    return AssetPools.load(assets_index)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
