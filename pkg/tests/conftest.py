import sys

import numpy as np
import pytest
import torch

from lmdsurrogate.fields import FieldState


def random_state(rng, H=8, W=8, dx=1.0, cA_ref=0.2, margin=0.05) -> FieldState:
    """Interior random state well inside the composition simplex."""
    phi = rng.uniform(0.0, 1.0, (H, W))
    u = rng.uniform(margin, 1.0 - margin, (H, W))
    v = rng.uniform(margin, 1.0 - margin, (H, W))
    total = rng.uniform(0.2, 0.9, (H, W))
    cA = total * u / (u + v)
    cB = total * v / (u + v)
    return FieldState(phi, cA, cB, dx=dx, cA_ref=cA_ref)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(acceptance.RESULTS):
        terminalreporter.write_line(line)
