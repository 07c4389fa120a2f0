import pytest

from streamsim.harness import run_scenario
from streamsim.scenario import builtin_scenario_names, load_builtin


@pytest.fixture(scope="session")
def bundled():
    """Run builtin scenarios at most once each; reports are shared."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_scenario(load_builtin(name))
        return cache[name]

    return get


@pytest.fixture(scope="session")
def grid(bundled):
    """Reports for every builtin scenario."""
    return {name: bundled(name) for name in builtin_scenario_names()}
