import sys
from pathlib import Path

import pytest

from ibalign.config import load_config
from ibalign.fixtures import generate, record_judgements
from ibalign.pipeline import run_session
from ibalign.telemetry import load_session

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE / "oracles"))


@pytest.fixture(scope="session")
def config():
    return load_config(env={})


@pytest.fixture(scope="session")
def bundles(tmp_path_factory):
    """One generated 60-step bundle per scenario, with replay recordings."""
    root = tmp_path_factory.mktemp("fixtures")
    cfg = load_config(env={})
    out = {}
    for kind in ("benign-idle", "benign-heavy", "exfil", "crash-burst"):
        path = generate(kind, root / kind, seed=7)
        record_judgements(run_session(load_session(path), cfg), path)
        out[kind] = path
    return out


@pytest.fixture
def data_dir():
    return HERE / "data"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
