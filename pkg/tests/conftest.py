import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hnf.layers import HnfLayer, HnfNetwork
from hnf.matrixgen import make_dct_orthonormal, make_random_orthonormal

_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance_outcomes[name] = report.outcome
    elif report.when == "setup" and report.outcome in ("skipped", "failed"):
        _acceptance_outcomes[name] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_acceptance_outcomes):
        outcome = _acceptance_outcomes[name]
        label = {"passed": "PASS", "failed": "FAIL",
                 "skipped": "SKIP"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{name}: {label}")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def build_chain(input_dim: int, n1: int, depth: int, kind: str = "random",
                seed: int = 0) -> HnfNetwork:
    """Orthonormal expansion chain with the default width rule n = fan-in."""
    layers = []
    m = input_dim
    n = n1
    for l in range(depth):
        if kind == "dct":
            w = make_dct_orthonormal(n, m)
        else:
            w = make_random_orthonormal(n, m, seed + l)
        layers.append(HnfLayer(w))
        m = 2 * n
        n = m
    return HnfNetwork(tuple(layers))
