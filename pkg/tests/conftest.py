import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from concordia.core import Dataset
from concordia.simlab import ScenarioConfig, generate

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "src" / "concordia" / "schemas"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance runs")


@pytest.fixture
def s1_small():
    return generate(ScenarioConfig(1, 200, seed=11))


@pytest.fixture
def s3_small():
    return generate(ScenarioConfig(3, 300, seed=5))


@pytest.fixture
def tiny():
    time = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    event = np.array([1, 0, 1, 1, 0, 1])
    X = np.array([[0.2], [1.0], [-0.5], [0.7], [0.0], [-1.2]])
    return Dataset(time, event, X, ("x",), tau=5.5)


def schema_validator(name):
    """Validator for a shipped schema, resolving its sibling ``$ref``s."""
    import jsonschema
    from referencing import Registry, Resource

    docs = {p.name: json.loads(p.read_text()) for p in SCHEMA_DIR.glob("*.json")}
    registry = Registry().with_resources(
        [(d["$id"], Resource.from_contents(d)) for d in docs.values()])
    schema = docs[name]
    cls = jsonschema.validators.validator_for(schema)
    return cls(schema, registry=registry)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
