import numpy as np
import pytest
from hypothesis import settings

from rankloss.fixtures import build_fixture
from rankloss.network import Dataset, Layer, Network

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fixture42():
    return build_fixture()


def random_net(seed, arch, activation="tanh", loss_kind="softmax-cross-entropy", scale=1.0):
    rng = np.random.default_rng(seed)
    layers = []
    for j, (d_in, d_out) in enumerate(zip(arch[:-1], arch[1:])):
        act = "identity" if j == len(arch) - 2 else activation
        layers.append(Layer(rng.standard_normal((d_out, d_in)) * scale / np.sqrt(d_in),
                            rng.standard_normal(d_out) * 0.1, act))
    return Network(tuple(layers), loss_kind)


def random_data(seed, m, d_in, d_out, loss_kind="softmax-cross-entropy"):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, d_in))
    if loss_kind == "softmax-cross-entropy":
        y = rng.integers(0, d_out, size=m)
    else:
        y = rng.standard_normal((m, d_out))
    return Dataset(x, y)


ACCEPTANCE = {}


def record_criterion(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
