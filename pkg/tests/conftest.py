import numpy as np
import pytest

from sbcompress.graph import conv2d, flatten, lif, linear, sequential


def random_spd(rng, dim, cond=1e3):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = np.geomspace(1.0, cond, dim)
    h = (q * eig) @ q.T
    return 0.5 * (h + h.T)


def random_spikes(rng, shape, rate=0.3):
    return (rng.random(shape) < rate).astype(np.float64)


def mlp(rng, sizes=(12, 10, 6), timesteps=6, tau_m=2.0, gain=2.5):
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((a, b)) * gain / np.sqrt(a)
        layers += [linear(f"fc{i}", w, rng.standard_normal(b) * 0.1), lif(f"lif{i}", tau_m)]
    return sequential(layers, (sizes[0],), timesteps)


def small_cnn(rng, timesteps=4, tau_m=2.0):
    layers = [
        conv2d("conv0", rng.standard_normal((4, 2, 3, 3)) * 0.8, padding=1),
        lif("lif0", tau_m),
        flatten("flat"),
        linear("fc1", rng.standard_normal((4 * 5 * 5, 5)) * 0.4),
        lif("lif1", tau_m),
    ]
    return sequential(layers, (2, 5, 5), timesteps)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
