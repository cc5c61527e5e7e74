"""Shared filter contract and a linear-Gaussian model for oracle checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray
    frame: int = 0


class LinearGaussianModel:
    """``x' = F x + B u + v``, ``y = H x + w`` with Gaussian ``v`` and ``w``.

    Exposes the same interface as :class:`robotrack.robot_model.RobotModel`
    so that every filter can be checked against the closed-form Kalman
    filter.
    """

    angle_index = None

    def __init__(self, F, H, Q, R, B=None):
        self.F = np.atleast_2d(np.asarray(F, dtype=float))
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.n = self.F.shape[0]
        self.m = self.H.shape[0]
        self.B = np.zeros((self.n, 1)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))

    def f(self, x, u):
        u = np.zeros(self.B.shape[1]) if u is None else np.asarray(u, dtype=float)
        return np.asarray(x) @ self.F.T + u @ self.B.T

    def jac_f(self, x, u):
        return self.F

    def h(self, x):
        return np.asarray(x) @ self.H.T

    def jac_h(self, x):
        return self.H

    def residual(self, y, yhat):
        return np.asarray(y, dtype=float) - yhat


def kalman_filter(model: LinearGaussianModel, x0, P0, inputs, measurements):
    """Closed-form Kalman filter used as the reference oracle.

    Returns ``(means, covs)`` of the posterior after each measurement.
    """
    x = np.asarray(x0, dtype=float)
    P = np.asarray(P0, dtype=float)
    means, covs = [], []
    for u, y in zip(inputs, measurements):
        x = model.f(x, u)
        P = model.F @ P @ model.F.T + model.Q
        S = model.H @ P @ model.H.T + model.R
        K = np.linalg.solve(S, model.H @ P).T
        x = x + K @ (np.asarray(y) - model.h(x))
        P = P - K @ S @ K.T
        means.append(x)
        covs.append(P)
    return np.array(means), np.array(covs)


class Filter:
    """Common surface of every filter in the benchmark.

    A cycle is ``predict(u)`` followed by either ``correct(y)`` or
    ``skip_correction()``; :meth:`step` runs the accepted path. Between the
    two halves, :meth:`predicted_measurement` exposes the predicted
    observation and its innovation covariance for outlier gating.
    """

    name = "filter"

    def __init__(self, model):
        self.model = model
        self.resets = 0
        self.frame = 0

    def predict(self, u) -> None:
        raise NotImplementedError

    def correct(self, y) -> None:
        raise NotImplementedError

    def skip_correction(self) -> None:
        raise NotImplementedError

    def predicted_measurement(self):
        raise NotImplementedError

    @property
    def estimate(self) -> np.ndarray:
        raise NotImplementedError

    def predict_ahead(self, n: int, inputs) -> np.ndarray:
        """Means of the ``1..n``-step predictions, shape ``(n, state_dim)``.

        The filter state is left untouched.
        """
        raise NotImplementedError

    def step(self, u, y) -> np.ndarray:
        self.predict(u)
        self.correct(y)
        return self.estimate
