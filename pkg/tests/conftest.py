import numpy as np
import pytest

from robotrack.filters import LinearGaussianModel
from robotrack.noise_sim import DEFAULT_T, NoiseConfig
from robotrack.robot_model import RobotModel, RobotParams


@pytest.fixture(scope="session")
def robot_model():
    noise = NoiseConfig()
    return RobotModel(RobotParams(), DEFAULT_T, noise.process_cov(DEFAULT_T), noise.R)


def make_linear_system(seed=7, n=6, m=3):
    """Stable 6-state linear-Gaussian system with a 3-dimensional observation."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    F = 0.95 * A / np.max(np.abs(np.linalg.eigvals(A)))
    H = rng.standard_normal((m, n))
    Lq = 0.1 * rng.standard_normal((n, n))
    Lr = 0.2 * rng.standard_normal((m, m))
    Q = Lq @ Lq.T + 0.01 * np.eye(n)
    R = Lr @ Lr.T + 0.05 * np.eye(m)
    B = rng.standard_normal((n, 2))
    return LinearGaussianModel(F, H, Q, R, B)


def simulate_linear(model, steps, seed=11):
    rng = np.random.default_rng(seed)
    x = np.zeros(model.n)
    Lq, Lr = np.linalg.cholesky(model.Q), np.linalg.cholesky(model.R)
    inputs, ys = [], []
    for _ in range(steps):
        u = rng.standard_normal(model.B.shape[1])
        x = model.f(x, u) + Lq @ rng.standard_normal(model.n)
        inputs.append(u)
        ys.append(model.h(x) + Lr @ rng.standard_normal(model.m))
    return np.array(inputs), np.array(ys)


@pytest.fixture(scope="session")
def linear_system():
    return make_linear_system()


def scalar_model():
    return LinearGaussianModel([[0.9]], [[1.0]], [[1.0]], [[1.0]])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
