from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import HealthCheck, settings

from batchgap.config import RunConfig
from batchgap.core import WorkloadSpec

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def default_config() -> RunConfig:
    return RunConfig()


@pytest.fixture(scope="session")
def small_config() -> RunConfig:
    """OPT-1.3B on the H100 preset with a 200-request workload."""
    return replace(RunConfig(), workload=WorkloadSpec(num_requests=200))


@pytest.fixture
def tiny_config() -> RunConfig:
    return replace(RunConfig(), workload=WorkloadSpec(num_requests=12, fixed_input_len=20,
                                                      fixed_output_len=9))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS):
        terminalreporter.write_line(line)
