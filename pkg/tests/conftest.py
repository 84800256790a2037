import numpy as np
import pytest

from mannprune.data import SkeletonSchema
from mannprune.network import NetworkConfig, init_network
from mannprune.numeric import make_rng


@pytest.fixture(scope="session")
def schema():
    return SkeletonSchema.quadruped()


@pytest.fixture
def tiny_config():
    return NetworkConfig(d_in=5, d_out=4, gating_indices=[0, 2, 4], h_size=6, n_experts=3,
                         g_hidden=5, dropout_retention=1.0)


@pytest.fixture
def tiny_net(tiny_config):
    net = init_network(tiny_config, make_rng(1))
    rng = make_rng(1, 5)
    for name, p in net.params.items():
        if name.startswith(("b", "c")):
            p += 0.1 * rng.standard_normal(p.shape).astype(p.dtype)
    return net


def perturbed_f64(cfg, seed):
    """Random f64 network with nonzero biases, for gradient checks."""
    net = init_network(cfg, make_rng(seed), dtype=np.float64)
    rng = make_rng(seed, 1)
    for p in net.params.values():
        p += 0.2 * rng.standard_normal(p.shape)
    return net


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
