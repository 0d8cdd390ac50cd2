import functools

import numpy as np
import pytest

from lodcontrol.assembly import assemble
from lodcontrol.coeff import constant, gen_block_random, oscillatory
from lodcontrol.grid import build_nested
from lodcontrol.interp import build_interp
from lodcontrol.saddle import build_as_preconditioner, build_kernel_operators

FIELDS = {
    "oscillatory": lambda: oscillatory(0.08),
    "heterogeneous": lambda: gen_block_random(1, 40, 1.0, 1350.0),
    "constant": lambda: constant(1.0),
}


class Setup:
    def __init__(self, N, R, kind):
        self.grid = build_nested(N, R)
        self.field = FIELDS[kind]()
        self.ops = assemble(self.grid, self.field)
        self.interp = build_interp(self.grid)
        self.kops = build_kernel_operators(self.ops.A, self.ops.M, self.interp)
        self.S = build_as_preconditioner(self.grid, self.interp, self.kops)


@functools.lru_cache(maxsize=None)
def setup_for(N, R, kind="constant"):
    return Setup(N, R, kind)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
