import numpy as np
import pytest

from conftest import simulate_linear
from robotrack.filters import GAUSSIAN_FILTERS, LinearGaussianModel, kalman_filter
from robotrack.filters.gaussian import DD1, DD2, EKF, unscented_sigma_points
from robotrack.noise_sim import NoiseConfig, reference_trajectory, simulate_run

NAMES = list(GAUSSIAN_FILTERS)


def run_filter(filt, inputs, ys):
    for u, y in zip(inputs, ys):
        filt.predict(u)
        filt.correct(y)
    return filt


@pytest.mark.parametrize("name", NAMES)
def test_matches_kalman_oracle(name, linear_system):
    inputs, ys = simulate_linear(linear_system, 100)
    x0, P0 = np.zeros(6), np.eye(6)
    means, covs = kalman_filter(linear_system, x0, P0, inputs, ys)
    filt = run_filter(GAUSSIAN_FILTERS[name](linear_system, x0, P0), inputs, ys)
    np.testing.assert_allclose(filt.estimate, means[-1], atol=1e-8)
    np.testing.assert_allclose(filt.cov, covs[-1], atol=1e-8)


def test_ekf_scalar_hand_recursion():
    model = LinearGaussianModel([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    f = EKF(model, [0.0], [[1.0]])
    f.predict(None)
    assert f.P_prior[0, 0] == pytest.approx(2.0)
    f.correct(np.array([3.0]))
    assert f.P[0, 0] == pytest.approx(2.0 / 3.0)
    assert f.x[0] == pytest.approx(2.0)


def test_ekf_zero_innovation_and_no_inflation(robot_model):
    x0 = np.array([0.1, 0.2, 0.3, 0.4, 0.1, 0.5])
    f = EKF(robot_model, x0, np.eye(6) * 1e-3)
    f.predict(np.ones(3))
    xp, Pp = f.x_prior.copy(), f.P_prior.copy()
    f.correct(robot_model.h(xp))
    np.testing.assert_allclose(f.x, xp, atol=1e-15)
    assert np.min(np.linalg.eigvalsh(Pp - f.P)) >= -1e-10


def test_ekf_zero_noise_fixed_point():
    model = LinearGaussianModel(np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2))
    f = EKF(model, np.zeros(2), np.diag([2.0, 3.0]))
    f.predict(None)
    np.testing.assert_array_equal(f.P_prior, np.diag([2.0, 3.0]))


def test_unscented_points():
    rng = np.random.default_rng(0)
    mean = rng.standard_normal(6)
    A = rng.standard_normal((6, 6))
    P = A @ A.T + np.eye(6)
    sp = unscented_sigma_points(mean, P)
    assert sp.mean_weights.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(sp.mean(), mean, atol=1e-10)
    np.testing.assert_allclose(sp.cov(), P, atol=1e-10)
    M, b = rng.standard_normal((4, 6)), rng.standard_normal(4)
    Y = sp.points @ M.T + b
    ym = sp.mean_weights @ Y
    np.testing.assert_allclose(ym, M @ mean + b, atol=1e-10)
    d = Y - ym
    np.testing.assert_allclose((d.T * sp.cov_weights) @ d, M @ P @ M.T, atol=1e-9)


class QuadraticModel:
    """Scalar random walk observed through ``y = x**2``."""

    n, m, angle_index = 1, 1, None
    Q = np.array([[1e-4]])
    R = np.array([[1e-2]])

    def f(self, x, u):
        return np.asarray(x, dtype=float).copy()

    def h(self, x):
        return np.asarray(x, dtype=float) ** 2

    def residual(self, y, yhat):
        return np.asarray(y, dtype=float) - yhat


def test_dd2_captures_second_order_term():
    model = QuadraticModel()
    x, P = 1.5, 0.04
    dd2 = DD2(model, [x], [[P - 1e-4]])
    dd2.predict(None)
    zhat, _ = dd2.predicted_measurement()
    assert zhat[0] == pytest.approx(x * x + P, abs=1e-12)
    dd1 = DD1(model, [x], [[P - 1e-4]])
    dd1.predict(None)
    assert dd1.predicted_measurement()[0][0] == pytest.approx(x * x, abs=1e-12)


@pytest.fixture(scope="module")
def gaussian_run():
    traj = reference_trajectory(5)
    return traj, simulate_run(traj, NoiseConfig(outlier_prob=0.0), seed=4)


@pytest.mark.parametrize("sr, full", [("SRUKF", "UKF"), ("SRCDKF", "CDKF")])
def test_square_root_matches_full(sr, full, robot_model, gaussian_run):
    traj, run = gaussian_run
    x0 = np.zeros(6)
    x0[:3] = run.measurements[0]
    P0 = NoiseConfig().process_cov(traj.T)
    a = GAUSSIAN_FILTERS[sr](robot_model, x0, P0)
    b = GAUSSIAN_FILTERS[full](robot_model, x0, P0)
    for k in range(1, traj.length):
        a.step(traj.inputs[k - 1], run.measurements[k])
        b.step(traj.inputs[k - 1], run.measurements[k])
        assert np.max(np.abs(a.cov - b.P)) <= 1e-7
    np.testing.assert_allclose(a.estimate, b.estimate, atol=1e-7)


@pytest.mark.parametrize("name", NAMES)
def test_predict_ahead_is_pure(name, robot_model, gaussian_run):
    traj, run = gaussian_run
    x0 = np.zeros(6)
    x0[:3] = run.measurements[0]
    P0 = NoiseConfig().process_cov(traj.T)
    a = GAUSSIAN_FILTERS[name](robot_model, x0, P0)
    b = GAUSSIAN_FILTERS[name](robot_model, x0, P0)
    for k in range(1, 60):
        a.step(traj.inputs[k - 1], run.measurements[k])
        b.step(traj.inputs[k - 1], run.measurements[k])
        ahead = a.predict_ahead(8, traj.inputs[k : k + 8])
        assert ahead.shape == (8, 6)
        np.testing.assert_array_equal(a.estimate, b.estimate)
        np.testing.assert_array_equal(a.cov, b.cov)
    # one step ahead equals the next prediction stage
    one = a.predict_ahead(1, traj.inputs[60:61])
    a.predict(traj.inputs[60])
    np.testing.assert_allclose(one[0], a.x_prior, atol=1e-14)


@pytest.mark.parametrize("name", NAMES)
def test_static_robot_prediction(name, robot_model):
    x0 = np.array([0.5, -0.3, 0.2, 0, 0, 0])
    f = GAUSSIAN_FILTERS[name](robot_model, x0, NoiseConfig().process_cov(1 / 30))
    ahead = f.predict_ahead(8, np.zeros((8, 3)))
    np.testing.assert_allclose(ahead[:, :3], np.tile(x0[:3], (8, 1)), atol=1e-12)


@pytest.mark.parametrize("name", NAMES)
def test_ahead_covariance_closed_form(name, linear_system):
    P0 = np.eye(6)
    f = GAUSSIAN_FILTERS[name](linear_system, np.zeros(6), P0)
    n = 5
    belief = f.predict_belief(n, np.zeros((n, 2)))
    F, Q = linear_system.F, linear_system.Q
    Fn = np.linalg.matrix_power(F, n)
    expected = Fn @ P0 @ Fn.T + sum(np.linalg.matrix_power(F, i) @ Q @ np.linalg.matrix_power(F, i).T for i in range(n))
    np.testing.assert_allclose(belief.cov, expected, atol=1e-10)
    np.testing.assert_array_equal(f.cov, P0) if name in ("EKF", "UKF", "CDKF") else None


@pytest.mark.parametrize("name", NAMES)
def test_no_resets_on_gaussian_runs(name, robot_model):
    cfg = NoiseConfig(outlier_prob=0.0)
    P0 = cfg.process_cov(1 / 30)
    for tid in (1, 4, 6):
        traj = reference_trajectory(tid)
        for seed in range(20 if tid == 6 else 3):
            run = simulate_run(traj, cfg, seed)
            x0 = np.zeros(6)
            x0[:3] = run.measurements[0]
            f = GAUSSIAN_FILTERS[name](robot_model, x0, P0)
            for k in range(1, traj.length):
                f.step(traj.inputs[k - 1], run.measurements[k])
                C = f.cov
                assert np.max(np.abs(C - C.T)) <= 1e-10
            assert f.resets == 0
