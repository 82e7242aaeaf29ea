import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cogflow.model import model_from_dict

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def model(**over):
    """1D two-state model document with overridable sections."""
    doc = {
        "dim": 1,
        "domain": [[-3.0, 3.0]],
        "n_cognitive": 2,
        "velocity": {"family": "constant-per-y", "constants": [[0.3], [-0.3]]},
        "kernel": {"family": "fixed-weights", "weights": [0.4, 0.6]},
        "rate": 1.0,
        "initial": {"family": "gaussian", "mean": [0.0], "std": [0.4]},
    }
    doc.update(over)
    return model_from_dict(doc)


def zero_field(m=2, dim=1, **over):
    doc = dict(
        dim=dim,
        domain=[[-3.0, 3.0]] * dim,
        n_cognitive=m,
        velocity={"family": "constant-per-y", "constants": [[0.0] * dim] * m},
        kernel={"family": "uniform"},
        initial={"family": "gaussian", "mean": [0.0] * dim, "std": [0.5] * dim},
    )
    doc.update(over)
    return model(**doc)


@pytest.fixture
def telegraph():
    return model()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
