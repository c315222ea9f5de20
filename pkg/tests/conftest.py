import numpy as np
import pytest

from privsplit.data import SynthConfig, generate, split_train_test
from privsplit.nn import TrainConfig, init_network, train_classifier


def fd_gradient(f, params, eps=1e-5):
    """Central finite difference of scalar ``f()`` w.r.t. every entry of ``params`` (in place)."""
    g = np.zeros_like(params)
    it = np.nditer(params, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = params[i]
        params[i] = old + eps
        hi = f()
        params[i] = old - eps
        lo = f()
        params[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


@pytest.fixture(scope="session")
def small_data():
    d = generate(SynthConfig(n_identities=8, samples_per_identity=20, dim=6,
                             cluster_spread=0.1, seed=3))
    return split_train_test(d, 0.7, seed=3)


@pytest.fixture(scope="session")
def small_net(small_data):
    train, _ = small_data
    net = init_network([6, 12, 8, 2], seed=5)
    return train_classifier(train.x, train.ct1, net, TrainConfig(0.1, 40, 16, 5))


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def report_criterion(number, title, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
