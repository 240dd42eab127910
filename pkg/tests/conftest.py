import os

import numpy as np
import pytest

from snf import net as nn
from snf.tensor_core import Rng

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def image_path():
    return os.path.join(FIXTURES, "astronaut64.ppm")


def random_net(seed, in_dim=2, out_dim=3, depth=3, widths=(4, 7, 9), perturb=True):
    """Multi-stage net with every block randomized (zero blocks would hide gradient bugs)."""
    rng = Rng(seed)
    net = nn.new_net(in_dim, out_dim, depth, widths[0], rng=rng)
    for w in widths[1:]:
        net = nn.grow(net, w, rng)
    if perturb:
        for p in net.params().values():
            p += rng.uniform(-0.5, 0.5, p.shape)
    return net


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
