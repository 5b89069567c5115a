import pytest

from otdrfault.plant import AcquisitionConfig


@pytest.fixture
def quiet_config():
    """Default acquisition with noise switched off."""
    return AcquisitionConfig(noise_sigma_linear=0.0)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Append one-line acceptance verdicts; printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
