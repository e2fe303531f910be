import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def default_ablation():
    """Five paired 30-epoch runs on the default synthetic data, shared across modules."""
    from mgmra.experiments import ablate

    start = time.perf_counter()
    runs = ablate(range(5))
    return runs, time.perf_counter() - start


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])
