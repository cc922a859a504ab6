import pytest

from crowdctl.ansatz import SystemConfig
from crowdctl.designer import design_gate


@pytest.fixture(scope="session")
def config():
    return SystemConfig.reference()


@pytest.fixture(scope="session")
def programs(config):
    """Designed and verified programs, built once per session."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = design_gate(name, config)
        return cache[name]
    return get
