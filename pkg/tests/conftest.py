import numpy as np
import pytest

from bridgegen._random import make_rng

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return make_rng(20240601)


@pytest.fixture
def criterion():
    """Record ``(label, passed, detail)`` for the acceptance summary."""
    def record(label, passed, detail=""):
        _ACCEPTANCE.append((label, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}  {detail}")


def random_net_and_input(rng, max_layers=3, max_width=16, margin=1e-3):
    """Random small network plus input whose pre-activations stay clear of the ReLU kink."""
    from bridgegen.nn import MlpNetwork, _forward_cache

    while True:
        depth = int(rng.integers(1, max_layers + 1))
        dims = [int(v) for v in rng.integers(1, max_width + 1, size=depth + 1)]
        weights = [rng.normal(size=(dims[i + 1], dims[i])) for i in range(depth)]
        biases = [rng.normal(size=dims[i + 1]) for i in range(depth)]
        net = MlpNetwork(dims, weights, biases)
        x = rng.normal(size=dims[0])
        _, _, pre = _forward_cache(net, x[None, :])
        if all(np.min(np.abs(z)) > margin for z in pre):
            return net, x
